//! Losses, optimizer and the epoch loop.

mod loss;
mod optim;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, Scores};
use crate::model::{Checkpoint, Model, TrainingMeta};
use crate::ops::NormMode;

pub use loss::{
    bce_loss, combined_loss, combined_loss_graph, gradient_consistency, gradient_consistency_graph, l2_penalty, plane,
    to_gray, LossConfig, LossReport, MAG_FLOOR,
};
pub use optim::{Adadelta, AdadeltaConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub optimizer: AdadeltaConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { epochs: 50, batch_size: 4, seed: 0, loss: LossConfig::default(), optimizer: AdadeltaConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted means over the epoch's batches.
    pub train: LossReport,
    pub val: Scores,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Epoch with the highest validation IoU, earliest on ties.
    pub best_epoch: Option<usize>,
}

pub const HISTORY_HEADER: &str = "epoch\tl_m\tl_c\tl2\ttotal\tval_f1\tval_iou\tval_accuracy\tval_grad_consistency";

impl History {
    /// Tab-separated, one row per epoch, values in shortest round-trip form.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.epoch, r.train.l_m, r.train.l_c, r.train.l2, r.train.total, r.val.f1, r.val.iou, r.val.accuracy,
                r.val.grad_consistency
            );
        }
        out
    }
}

pub struct FitOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: History,
}

/// Trains `model` with seeded shuffling (partial final batches kept) and
/// returns the checkpoint of the best validation epoch. `on_epoch` sees each
/// record as it is produced.
pub fn fit(
    mut model: Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &FitConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Dataset("training and validation sets must be non-empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("fit", "batch size must be positive"));
    }
    let spec = model.spec().clone();
    cfg.loss.validate(spec.num_classes)?;
    let size = spec.input_size;
    for s in train.samples.iter().chain(&val.samples) {
        if s.size() != (size, size) {
            return Err(Error::Dataset(format!("sample {} is {:?}, model expects {size}×{size}", s.id, s.size())));
        }
    }

    let mut opt = Adadelta::for_model(cfg.optimizer, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let snapshot = |model: &Model, opt: &Adadelta, history: &History| Checkpoint {
        model: model.clone(),
        optimizer: Some(opt.to_tensors()),
        meta: TrainingMeta {
            epoch: history.records.len() as u32,
            loss_history: history.records.iter().map(|r| r.train.total).collect(),
        },
    };
    let mut best = snapshot(&model, &opt, &history);
    let mut best_iou = f64::NEG_INFINITY;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossReport::default();
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (images, targets) = train.batch::<f32>(chunk, spec.num_classes, cfg.loss.hair_class_index)?;
            let gray = to_gray(&images)?;
            let mut g = Graph::new();
            let x = g.constant(images);
            let pass = model.forward_graph(&mut g, x, NormMode::Train)?;
            let (total, report) = combined_loss_graph(&mut g, &model, &pass, &targets, &gray, &cfg.loss)?;
            if !report.total.is_finite() {
                return Err(Error::Divergence { epoch, batch: batch_no + 1, value: report.total });
            }
            let mut grads = g.backward(total)?;
            let mut slot = 0;
            for (param, var) in model.params_mut().iter_mut().zip(&pass.params) {
                let Some(var) = var else { continue };
                let grad = grads.take(*var)?;
                if !grad.all_finite() {
                    return Err(Error::Divergence { epoch, batch: batch_no + 1, value: f64::NAN });
                }
                opt.step(slot, &mut param.value, &grad)?;
                slot += 1;
            }
            model.apply_norm_updates(&pass.norm_updates);
            let n = chunk.len() as f64;
            sums.l_m += report.l_m * n;
            sums.l_c += report.l_c * n;
            sums.l2 += report.l2 * n;
            sums.total += report.total * n;
        }
        let n = train.len() as f64;
        let train_report = LossReport { l_m: sums.l_m / n, l_c: sums.l_c / n, l2: sums.l2 / n, total: sums.total / n };
        let val_scores = evaluate_dataset(&model, val, None, cfg.loss.hair_class_index)?.mean;
        let record = EpochRecord { epoch, train: train_report, val: val_scores };
        on_epoch(&record);
        history.records.push(record);
        if val_scores.iou > best_iou {
            best_iou = val_scores.iou;
            history.best_epoch = Some(epoch);
            best = snapshot(&model, &opt, &history);
        }
    }
    let last = snapshot(&model, &opt, &history);
    Ok(FitOutcome { best, last, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::model::{build, ModelSpec};

    fn setup() -> (Model, Dataset) {
        let spec = ModelSpec::hairmattenet().with_input_size(32).with_width(0.125).with_decoder_depth(16);
        let data = generate_synthetic(&SynthConfig { count: 5, size: 32, ..Default::default() }).unwrap();
        (build(&spec, 0).unwrap(), data)
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let (model, data) = setup();
        let out = fit(model.clone(), &data, &data, &FitConfig { epochs: 0, ..Default::default() }, |_| {}).unwrap();
        assert!(out.history.records.is_empty());
        assert_eq!(out.best.model.params().len(), model.params().len());
        assert!(out.best.model.params().iter().zip(model.params()).all(|(a, b)| a.value == b.value));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (model, data) = setup();
        let cfg = FitConfig { epochs: 2, batch_size: 2, ..Default::default() };
        let a = fit(model.clone(), &data, &data, &cfg, |_| {}).unwrap();
        let b = fit(model, &data, &data, &cfg, |_| {}).unwrap();
        assert_eq!(a.history.to_tsv(), b.history.to_tsv());
        assert_eq!(a.best.to_bytes(), b.best.to_bytes());
        assert_eq!(a.history.records.len(), 2);
    }

    #[test]
    fn rejects_empty_and_mismatched_sets() {
        let (model, data) = setup();
        assert!(fit(model.clone(), &Dataset::default(), &data, &FitConfig::default(), |_| {}).is_err());
        let big = generate_synthetic(&SynthConfig { count: 1, size: 64, ..Default::default() }).unwrap();
        assert!(fit(model, &big, &data, &FitConfig::default(), |_| {}).is_err());
    }
}
