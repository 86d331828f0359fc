//! Run configuration: assembled from flags, then overridden by an optional
//! TOML file. The canonical form is the TOML serialization, and parsing it
//! back yields the same value.

use std::path::{Path, PathBuf};

use hairmatte_core::guided_filter::{GuideMode, GuidedFilterParams};
use hairmatte_core::model::{ModelSpec, Variant};
use hairmatte_core::train::{AdadeltaConfig, FitConfig, LossConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Synth,
    #[default]
    Train,
    Infer,
    Eval,
    Refine,
    Recolor,
    Bench,
}

/// Model fields left unset fall back to the spec defaults (or, for commands
/// that load a checkpoint, must agree with it when set).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Option<String>,
    pub input_size: Option<usize>,
    pub num_classes: Option<usize>,
    pub width: Option<f64>,
    pub decoder_depth: Option<usize>,
    pub batchnorm: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub w_gradcons: f64,
    pub l2: f64,
    pub hair_class: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossConfig::default();
        LossSection { w_gradcons: d.w, l2: d.l2_weight, hair_class: d.hair_class_index }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = AdadeltaConfig::default();
        OptimizerSection { lr: d.lr, rho: d.rho, eps: d.eps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    /// Append horizontally mirrored copies of the training split.
    pub flip: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { epochs: 50, batch: 4, flip: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub refine: bool,
    pub radius: usize,
    pub eps: f64,
    /// `gray` or `rgb`.
    pub guide: String,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = GuidedFilterParams::default();
        FilterSection { refine: false, radius: d.radius, eps: d.eps, guide: "gray".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory (manifest layout).
    pub dataset: Option<PathBuf>,
    pub split: String,
    pub checkpoint: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Target hair colour, RGB in `[0, 1]`.
    pub color: Option<[f64; 3]>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { dataset: None, split: "test".into(), checkpoint: None, inputs: Vec::new(), image: None, mask: None, color: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Canvas side; defaults to the model input size.
    pub size: Option<usize>,
    /// Label-noise radius; 0 keeps exact masks.
    pub coarse: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { train: 100, val: 20, test: 20, size: None, coarse: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub iterations: usize,
    pub warmup: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { iterations: 20, warmup: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    pub loss: LossSection,
    pub optimizer: OptimizerSection,
    pub train: TrainSection,
    pub filter: FilterSection,
    pub data: DataSection,
    pub synth: SynthSection,
    pub bench: BenchSection,
}

impl RunConfig {
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Applies the keys present in `text` on top of `self`.
    pub fn overridden_by(&self, text: &str) -> Result<Self, CliError> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let mut base = toml::Table::try_from(self).expect("config serializes");
        merge(&mut base, overrides);
        base.try_into().map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn override_from_file(&self, path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.overridden_by(&text)
    }

    /// Model fields that were set explicitly, layered on `base`.
    pub fn apply_model(&self, base: ModelSpec) -> Result<ModelSpec, CliError> {
        let m = &self.model;
        let mut spec = base;
        if let Some(v) = &m.variant {
            spec.variant = v.parse::<Variant>().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        spec.input_size = m.input_size.unwrap_or(spec.input_size);
        spec.num_classes = m.num_classes.unwrap_or(spec.num_classes);
        spec.width_multiplier = m.width.unwrap_or(spec.width_multiplier);
        spec.decoder_depth = m.decoder_depth.unwrap_or(spec.decoder_depth);
        spec.use_batchnorm = m.batchnorm.unwrap_or(spec.use_batchnorm);
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        self.apply_model(ModelSpec::hairmattenet())
    }

    pub fn model_is_set(&self) -> bool {
        self.model != ModelSection::default()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { w: self.loss.w_gradcons, l2_weight: self.loss.l2, hair_class_index: self.loss.hair_class }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch,
            seed: self.seed,
            loss: self.loss_config(),
            optimizer: AdadeltaConfig { lr: self.optimizer.lr, rho: self.optimizer.rho, eps: self.optimizer.eps },
        }
    }

    pub fn filter_params(&self) -> Result<GuidedFilterParams, CliError> {
        let guide_mode = match self.filter.guide.as_str() {
            "gray" => GuideMode::Gray,
            "rgb" => GuideMode::Rgb,
            other => return Err(CliError::Usage(format!("guide must be gray or rgb, got {other:?}"))),
        };
        let params = GuidedFilterParams { radius: self.filter.radius, eps: self.filter.eps, guide_mode };
        params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(params)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
