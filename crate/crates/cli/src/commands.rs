use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hairmatte_core::data::{
    generate_synthetic, load_image, resize_bilinear, save_image, CoarseLabels, Dataset, DatasetSplits, Split, SynthConfig,
};
use hairmatte_core::guided_filter::refine_mask;
use hairmatte_core::metrics::{evaluate_dataset, MetricsReport, TABLE_HEADER};
use hairmatte_core::model::{build, Checkpoint, Model, ModelSpec, Variant};
use hairmatte_core::train::{fit, History};
use hairmatte_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::recolor::recolor;

pub const CHECKPOINT_FILE: &str = "model.hmnc";
pub const LAST_CHECKPOINT_FILE: &str = "last.hmnc";
pub const HISTORY_FILE: &str = "history.tsv";
pub const SUMMARY_FILE: &str = "summary.tsv";
pub const CONFIG_FILE: &str = "config.toml";

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    let path = value.as_deref().ok_or_else(|| CliError::Usage(format!("{flag} is required")))?;
    if !path.exists() {
        return Err(CliError::Usage(format!("{flag}: {} does not exist", path.display())));
    }
    Ok(path)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "output".into())
}

/// Any gray input becomes three identical channels.
fn load_rgb(path: &Path) -> Result<Tensor, CliError> {
    let img = load_image(path)?;
    if img.shape().c() == 3 {
        return Ok(img);
    }
    let plane = img.data().to_vec();
    Ok(Tensor::from_vec(img.shape().with_c(3), plane.repeat(3))?)
}

fn load_matte(path: &Path) -> Result<Tensor, CliError> {
    let m = load_image(path)?;
    Ok(if m.shape().c() == 1 { m } else { m.channel(0)? })
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    let path = require(&cfg.data.checkpoint, "--checkpoint")?;
    let ck = Checkpoint::load(path)?;
    if cfg.model_is_set() {
        let requested = cfg.apply_model(ck.model.spec().clone())?;
        if &requested != ck.model.spec() {
            return Err(CliError::Usage(format!(
                "checkpoint spec [{}] does not match requested spec [{}]",
                ck.model.spec().to_canonical().trim().replace('\n', ", "),
                requested.to_canonical().trim().replace('\n', ", ")
            )));
        }
    }
    Ok(ck)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<DatasetSplits, CliError> {
    let out = cfg.out_dir()?;
    let size = match cfg.synth.size {
        Some(s) => s,
        None => cfg.model_spec()?.input_size,
    };
    let s = &cfg.synth;
    let synth = SynthConfig {
        seed: cfg.seed,
        count: s.train + s.val + s.test,
        size,
        coarse: (s.coarse > 0).then_some(CoarseLabels { radius: s.coarse }),
        ..Default::default()
    };
    let mut all = generate_synthetic(&synth)?.samples;
    let test = all.split_off(s.train + s.val);
    let val = all.split_off(s.train);
    let splits = DatasetSplits { train: Dataset::new(all), val: Dataset::new(val), test: Dataset::new(test) };
    splits.write_dir(out)?;
    Ok(splits)
}

pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub history_file: PathBuf,
    pub summary_file: PathBuf,
    pub history: History,
    pub summary: Vec<MetricsReport>,
}

fn read_splits(cfg: &RunConfig, size: usize) -> Result<DatasetSplits, CliError> {
    let dir = require(&cfg.data.dataset, "--data")?;
    let splits = DatasetSplits::read_dir(dir)?;
    Ok(DatasetSplits { train: splits.train.resized(size)?, val: splits.val.resized(size)?, test: splits.test.resized(size)? })
}

fn summary_table(reports: &[MetricsReport]) -> String {
    let mut out = format!("{}\n", TABLE_HEADER.replacen("id", "model", 1));
    for r in reports {
        out.push_str(&r.summary_row());
    }
    out
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let spec = cfg.model_spec()?;
    let splits = read_splits(cfg, spec.input_size)?;
    let train = if cfg.train.flip { splits.train.flip_augment() } else { splits.train.clone() };
    let model: Model = build(&spec, cfg.seed)?;
    let fit_cfg = cfg.fit_config();
    let outcome = fit(model, &train, &splits.val, &fit_cfg, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.5} (bce {:.5}, gradcons {:.5}, l2 {:.5})  val iou {:.4}  f1 {:.4}",
            r.epoch, r.train.total, r.train.l_m, r.train.l_c, r.train.l2, r.val.iou, r.val.f1
        )
    })?;
    fs::create_dir_all(&out)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    let last_checkpoint = out.join(LAST_CHECKPOINT_FILE);
    outcome.best.save(&checkpoint)?;
    outcome.last.save(&last_checkpoint)?;
    let history_file = out.join(HISTORY_FILE);
    fs::write(&history_file, outcome.history.to_tsv())?;
    let mut summary = Vec::new();
    for split in [Split::Val, Split::Test] {
        let data = splits.get(split);
        if !data.is_empty() {
            let mut report = evaluate_dataset(&outcome.best.model, data, None, cfg.loss.hair_class)?;
            report.label = format!("{} {split}", report.label);
            summary.push(report);
        }
    }
    let summary_file = out.join(SUMMARY_FILE);
    fs::write(&summary_file, summary_table(&summary))?;
    fs::write(out.join(CONFIG_FILE), cfg.to_canonical())?;
    Ok(TrainArtifacts { checkpoint, last_checkpoint, history_file, summary_file, history: outcome.history, summary })
}

/// Hair probability of one image at its own resolution.
fn predict(model: &Model, image: &Tensor, cfg: &RunConfig) -> Result<Tensor, CliError> {
    let size = model.spec().input_size;
    let (h, w) = (image.shape().h(), image.shape().w());
    let input = resize_bilinear(image, size, size)?;
    let mut hair = model.forward(&input)?.channel(cfg.loss.hair_class)?;
    if cfg.filter.refine {
        hair = refine_mask(&input, &hair, &cfg.filter_params()?)?;
    }
    Ok(resize_bilinear(&hair, h, w)?.map(|v| v.clamp(0.0, 1.0)))
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let out = cfg.out_dir()?;
    let ck = load_checkpoint(cfg)?;
    if cfg.data.inputs.is_empty() {
        return Err(CliError::Usage("no input images given".into()));
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(cfg.data.inputs.len());
    for path in &cfg.data.inputs {
        let image = load_rgb(path)?;
        let hair = predict(&ck.model, &image, cfg)?;
        let target = out.join(format!("{}_mask.png", stem(path)));
        save_image(&target, &hair)?;
        written.push(target);
    }
    Ok(written)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<MetricsReport>, CliError> {
    let ck = load_checkpoint(cfg)?;
    let split: Split = cfg.data.split.parse().map_err(|e: hairmatte_core::Error| CliError::Usage(e.to_string()))?;
    let splits = read_splits(cfg, ck.model.spec().input_size)?;
    let data = splits.get(split);
    if data.is_empty() {
        return Err(CliError::Data(format!("split {split} is empty")));
    }
    let hair = cfg.loss.hair_class;
    let mut reports = vec![evaluate_dataset(&ck.model, data, None, hair)?];
    if cfg.filter.refine {
        reports.push(evaluate_dataset(&ck.model, data, Some(&cfg.filter_params()?), hair)?);
    }
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("eval_summary.tsv"), summary_table(&reports))?;
        for r in &reports {
            let slug = r.label.replace(" + ", "_").replace(' ', "_").to_lowercase();
            fs::write(out.join(format!("eval_{slug}.tsv")), r.to_table())?;
        }
    }
    Ok(reports)
}

pub fn render_eval(reports: &[MetricsReport]) -> String {
    summary_table(reports)
}

pub fn cmd_refine(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir()?;
    let image = load_rgb(require(&cfg.data.image, "--image")?)?;
    let mask_path = require(&cfg.data.mask, "--mask")?;
    let mask = load_matte(mask_path)?;
    let refined = refine_mask(&image, &mask, &cfg.filter_params()?)?;
    fs::create_dir_all(out)?;
    let target = out.join(format!("{}_refined.png", stem(mask_path)));
    save_image(&target, &refined)?;
    Ok(target)
}

pub fn cmd_recolor(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir()?;
    let image_path = require(&cfg.data.image, "--image")?;
    let image = load_rgb(image_path)?;
    let matte = load_matte(require(&cfg.data.mask, "--mask")?)?;
    let color = cfg.data.color.ok_or_else(|| CliError::Usage("--color is required".into()))?;
    let result = recolor(&image, &matte, color)?;
    fs::create_dir_all(out)?;
    let target = out.join(format!("{}_recolor.png", stem(image_path)));
    save_image(&target, &result)?;
    Ok(target)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub spec: ModelSpec,
    pub iterations: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub macs: u64,
    pub hairsegnet_macs: u64,
    pub hairmattenet_macs: u64,
    pub param_bytes: usize,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        format!(
            "variant\tinput_size\twidth\titerations\tmedian_ms\tp95_ms\tmacs\tparam_bytes\tmatte_over_seg_macs\n{}\t{}\t{}\t{}\t{:.3}\t{:.3}\t{}\t{}\t{:.4}\n",
            self.spec.variant,
            self.spec.input_size,
            self.spec.width_multiplier,
            self.iterations,
            self.median_ms,
            self.p95_ms,
            self.macs,
            self.param_bytes,
            self.hairmattenet_macs as f64 / self.hairsegnet_macs as f64
        )
    }
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport, CliError> {
    let model: Model = match &cfg.data.checkpoint {
        Some(_) => load_checkpoint(cfg)?.model,
        None => build(&cfg.model_spec()?, cfg.seed)?,
    };
    let spec = model.spec().clone();
    let other = |variant| -> Result<u64, CliError> {
        let m: Model = build(&ModelSpec { variant, ..spec.clone() }, 0)?;
        Ok(m.macs())
    };
    let (seg, matte) = match spec.variant {
        Variant::HairSegNet => (model.macs(), other(Variant::HairMatteNet)?),
        Variant::HairMatteNet => (other(Variant::HairSegNet)?, model.macs()),
    };
    if matte >= seg {
        return Err(CliError::Core(hairmatte_core::Error::InvalidSpec(format!(
            "HairMatteNet MACs {matte} not below HairSegNet MACs {seg}"
        ))));
    }
    if cfg.bench.iterations == 0 {
        return Err(CliError::Usage("bench iterations must be positive".into()));
    }
    let s = spec.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = (0..3 * s * s).map(|_| rng.gen::<f32>()).collect();
    let input = Tensor::from_vec(Shape::new(1, 3, s, s), data)?;
    for _ in 0..cfg.bench.warmup {
        model.forward(&input)?;
    }
    let mut times: Vec<f64> = (0..cfg.bench.iterations)
        .map(|_| {
            let t = Instant::now();
            model.forward(&input).map(|_| t.elapsed().as_secs_f64() * 1e3)
        })
        .collect::<Result<_, _>>()?;
    times.sort_by(f64::total_cmp);
    let report = BenchReport {
        iterations: times.len(),
        median_ms: percentile(&times, 0.5),
        p95_ms: percentile(&times, 0.95),
        macs: model.macs(),
        hairsegnet_macs: seg,
        hairmattenet_macs: matte,
        param_bytes: model.param_bytes(),
        spec,
    };
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("bench.tsv"), report.to_table())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 10.0);
        assert_eq!(percentile(&v, 0.95), 19.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }
}
