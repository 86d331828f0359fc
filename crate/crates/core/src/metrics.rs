//! Per-image segmentation scores and their dataset means.
//!
//! Predictions are binarized at 0.5 with ties counted as hair. The
//! "Performance" column is reported as `NA`: its formula is not available
//! here and is deliberately left unimplemented.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::guided_filter::{refine_mask, GuidedFilterParams};
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};
use crate::train::{gradient_consistency, to_gray};

pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

/// Ratio with the degenerate rule: an empty denominator scores 1 when both
/// masks are empty and 0 otherwise.
fn ratio(num: u64, den: u64, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    fn both_empty(&self) -> bool {
        self.true_pos + self.false_pos + self.false_neg == 0
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.true_pos, 2 * self.true_pos + self.false_pos + self.false_neg, self.both_empty())
    }

    pub fn iou(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_pos + self.false_neg, self.both_empty())
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.true_pos + self.true_neg, self.total(), self.both_empty())
    }

    /// Not implemented; see the module docs.
    pub fn performance(&self) -> Option<f64> {
        None
    }
}

pub fn confusion<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, threshold: f64) -> Result<ConfusionCounts> {
    gt.expect_shape("confusion", pred.shape())?;
    let thr = T::of(threshold);
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p >= thr, g >= T::of(0.5)) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Scores {
    pub f1: f64,
    pub performance: Option<f64>,
    pub iou: f64,
    pub accuracy: f64,
    pub grad_consistency: f64,
}

/// Consistency loss of a fixed prediction; the same computation as training.
pub fn grad_consistency_metric<T: Scalar>(image: &Tensor<T>, hair_prob: &Tensor<T>) -> Result<f64> {
    let gray = if image.shape().c() == 3 { to_gray(image)? } else { image.clone() };
    gradient_consistency(&gray, hair_prob)
}

/// Scores one `(1, 1, h, w)` hair probability against its binary mask.
pub fn score_image<T: Scalar>(image: &Tensor<T>, hair_prob: &Tensor<T>, gt: &Tensor<T>) -> Result<Scores> {
    let c = confusion(hair_prob, gt, THRESHOLD)?;
    Ok(Scores {
        f1: c.f1(),
        performance: c.performance(),
        iou: c.iou(),
        accuracy: c.accuracy(),
        grad_consistency: grad_consistency_metric(image, hair_prob)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub id: String,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub images: Vec<ImageScores>,
    pub mean: Scores,
}

pub const TABLE_HEADER: &str = "id\tf1\tperformance\tiou\taccuracy\tgrad_consistency";

fn row(out: &mut String, id: &str, s: &Scores) {
    let perf = s.performance.map_or("NA".to_string(), |v| format!("{v:.6}"));
    let _ = writeln!(out, "{id}\t{:.6}\t{perf}\t{:.6}\t{:.6}\t{:.6}", s.f1, s.iou, s.accuracy, s.grad_consistency);
}

impl MetricsReport {
    pub fn from_images(label: impl Into<String>, images: Vec<ImageScores>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("cannot summarize an empty evaluation set".into()));
        }
        let n = images.len() as f64;
        let avg = |f: fn(&Scores) -> f64| images.iter().map(|i| f(&i.scores)).sum::<f64>() / n;
        let performance = images.iter().map(|i| i.scores.performance).sum::<Option<f64>>().map(|s| s / n);
        let mean = Scores {
            f1: avg(|s| s.f1),
            performance,
            iou: avg(|s| s.iou),
            accuracy: avg(|s| s.accuracy),
            grad_consistency: avg(|s| s.grad_consistency),
        };
        Ok(MetricsReport { label: label.into(), images, mean })
    }

    /// Tab-separated table: header, one row per image, then a `mean` row.
    pub fn to_table(&self) -> String {
        let mut out = format!("{TABLE_HEADER}\n");
        for img in &self.images {
            row(&mut out, &img.id, &img.scores);
        }
        row(&mut out, "mean", &self.mean);
        out
    }

    /// The `mean` row alone, labelled with the report's label.
    pub fn summary_row(&self) -> String {
        let mut out = String::new();
        row(&mut out, &self.label, &self.mean);
        out
    }
}

/// Runs `model` on every sample (resized to the model input if needed) and
/// scores the hair channel, optionally after guided-filter refinement.
pub fn evaluate_dataset(
    model: &Model,
    dataset: &Dataset,
    refine: Option<&GuidedFilterParams>,
    hair_index: usize,
) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let size = model.spec().input_size;
    let mut images = Vec::with_capacity(dataset.len());
    for sample in &dataset.samples {
        let sample = sample.resized(size, size)?;
        let probs = model.forward(&sample.image)?;
        let mut hair = probs.channel(hair_index)?;
        if let Some(params) = refine {
            hair = refine_mask(&sample.image, &hair, params)?;
        }
        let gt = sample.hair_mask(hair_index)?;
        images.push(ImageScores { id: sample.id.clone(), scores: score_image(&sample.image, &hair, &gt)? });
    }
    let label = match refine {
        Some(_) => format!("{} + GF", model.spec().variant),
        None => model.spec().variant.to_string(),
    };
    MetricsReport::from_images(label, images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn t(v: &[f32]) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, 2, 2), v.to_vec()).unwrap()
    }

    #[test]
    fn hand_counts() {
        let c = confusion(&t(&[1.0, 1.0, 0.0, 0.0]), &t(&[1.0, 0.0, 0.0, 0.0]), THRESHOLD).unwrap();
        assert_eq!(c, ConfusionCounts { true_pos: 1, false_pos: 1, false_neg: 0, true_neg: 2 });
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.iou(), 0.5);
        assert_eq!(c.accuracy(), 0.75);
        assert_eq!(c.performance(), None);
    }

    #[test]
    fn ties_are_positive_and_empty_rules() {
        let c = confusion(&t(&[0.5; 4]), &t(&[0.0; 4]), THRESHOLD).unwrap();
        assert_eq!(c.false_pos, 4);
        let empty = confusion(&t(&[0.1; 4]), &t(&[0.0; 4]), THRESHOLD).unwrap();
        assert_eq!((empty.f1(), empty.iou(), empty.accuracy()), (1.0, 1.0, 1.0));
        assert!(confusion(&t(&[0.0; 4]), &Tensor::zeros(Shape::new(1, 1, 1, 4)), THRESHOLD).is_err());
    }

    #[test]
    fn report_means_and_table() {
        let a = ImageScores { id: "a".into(), scores: Scores { f1: 1.0, iou: 1.0, accuracy: 1.0, ..Default::default() } };
        let b = ImageScores { id: "b".into(), scores: Scores { f1: 0.5, iou: 1.0 / 3.0, accuracy: 0.5, ..Default::default() } };
        let r = MetricsReport::from_images("x", vec![a, b]).unwrap();
        assert_eq!(r.mean.f1, 0.75);
        let table = r.to_table();
        assert_eq!(table.lines().count(), 4);
        assert!(table.lines().last().unwrap().starts_with("mean\t0.750000\tNA\t"));
        assert!(MetricsReport::from_images("x", vec![]).is_err());
    }
}
