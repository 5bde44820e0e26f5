//! Segmentation metrics: per-class IoU and F1 over pooled pixel counts,
//! plus the class-weighted F-score.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::AFFORDANCES;
use crate::error::{Error, Result};
use crate::model::{AffordanceModel, SequenceBatch};

/// Weights of the nine affordances (taxonomy order) in the weighted F-score.
pub const WEIGHTED_F_WEIGHTS: [f64; 9] = [
    0.2,
    1.0 / 12.0,
    0.2,
    0.1,
    1.0 / 12.0,
    1.0 / 12.0,
    1.0 / 12.0,
    1.0 / 12.0,
    1.0 / 12.0,
];

/// Pixel counts for classes `1..classes`; background is never scored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    /// Counts for labels `0..classes` (including background).
    pub fn new(classes: usize) -> Self {
        let n = classes.saturating_sub(1);
        ConfusionCounts {
            tp: vec![0; n],
            fp: vec![0; n],
            fn_: vec![0; n],
        }
    }

    /// Number of scored (non-background) classes.
    pub fn classes(&self) -> usize {
        self.tp.len()
    }

    pub fn accumulate(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape(
                "accumulate",
                format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len()),
            ));
        }
        let n = self.classes();
        for (&p, &g) in pred.iter().zip(gt) {
            for (label, name) in [(p, "prediction"), (g, "ground truth")] {
                if label > n {
                    return Err(Error::Config(format!("{name} label {label} outside 0..={n}")));
                }
            }
            if p == g {
                if p > 0 {
                    self.tp[p - 1] += 1;
                }
            } else {
                if p > 0 {
                    self.fp[p - 1] += 1;
                }
                if g > 0 {
                    self.fn_[g - 1] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (a, b) in [(&mut self.tp, &other.tp), (&mut self.fp, &other.fp), (&mut self.fn_, &other.fn_)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// IoU of label `class` (1-based, taxonomy index).
    pub fn iou(&self, class: usize) -> f64 {
        let (tp, fp, fn_) = self.get(class);
        if tp + fp + fn_ == 0 {
            return 1.0;
        }
        tp as f64 / (tp + fp + fn_) as f64
    }

    /// F1 of label `class` (1-based, taxonomy index).
    pub fn f_score(&self, class: usize) -> f64 {
        let (tp, fp, fn_) = self.get(class);
        if tp + fp + fn_ == 0 {
            return 1.0;
        }
        if tp == 0 {
            return 0.0;
        }
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fn_) as f64;
        2.0 * p * r / (p + r)
    }

    fn get(&self, class: usize) -> (u64, u64, u64) {
        assert!(class >= 1 && class <= self.classes(), "class {class} is not scored");
        (self.tp[class - 1], self.fp[class - 1], self.fn_[class - 1])
    }
}

pub fn weighted_f(per_class_f: &[f64]) -> Result<f64> {
    if per_class_f.len() != WEIGHTED_F_WEIGHTS.len() {
        return Err(Error::Config(format!(
            "weighted F needs {} per-class scores, got {}",
            WEIGHTED_F_WEIGHTS.len(),
            per_class_f.len()
        )));
    }
    Ok(per_class_f.iter().zip(&WEIGHTED_F_WEIGHTS).map(|(f, w)| f * w).sum())
}

/// Video: the whole sequence. Static: the last frame alone with zero motion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Video,
    Static,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub iou: Vec<f64>,
    pub f1: Vec<f64>,
    pub mean_iou: f64,
    pub mean_f1: f64,
    /// `None` unless the nine-class taxonomy is in use.
    pub weighted_f1: Option<f64>,
    pub samples: usize,
}

impl MetricsReport {
    pub fn from_counts(counts: &ConfusionCounts, samples: usize) -> Self {
        let n = counts.classes();
        let iou: Vec<f64> = (1..=n).map(|c| counts.iou(c)).collect();
        let f1: Vec<f64> = (1..=n).map(|c| counts.f_score(c)).collect();
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let classes = (1..=n)
            .map(|c| AFFORDANCES.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string()))
            .collect();
        MetricsReport {
            classes,
            mean_iou: mean(&iou),
            mean_f1: mean(&f1),
            weighted_f1: weighted_f(&f1).ok(),
            iou,
            f1,
            samples,
        }
    }

    /// Aligned plain-text table: one row per class, then the aggregates.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>8} {:>8}", "class", "IoU", "F1");
        for ((name, iou), f1) in self.classes.iter().zip(&self.iou).zip(&self.f1) {
            let _ = writeln!(out, "{name:<10} {iou:>8.4} {f1:>8.4}");
        }
        let _ = writeln!(out, "{:<10} {:>8.4} {:>8.4}", "mean", self.mean_iou, self.mean_f1);
        if let Some(w) = self.weighted_f1 {
            let _ = writeln!(out, "{:<10} {:>8} {w:>8.4}", "weighted", "");
        }
        let _ = writeln!(out, "samples: {}", self.samples);
        out
    }
}

/// Scores an arbitrary per-sequence predictor.
pub fn evaluate_with<F>(dataset: &[SequenceBatch], classes: usize, mut predict: F) -> Result<MetricsReport>
where
    F: FnMut(&SequenceBatch) -> Result<Vec<usize>>,
{
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set is empty"));
    }
    let mut counts = ConfusionCounts::new(classes);
    for batch in dataset {
        let pred = predict(batch)?;
        counts.accumulate(&pred, &batch.label_mask)?;
    }
    Ok(MetricsReport::from_counts(&counts, dataset.len()))
}

pub fn evaluate(model: &AffordanceModel, dataset: &[SequenceBatch], mode: EvalMode) -> Result<MetricsReport> {
    evaluate_with(dataset, model.config().seg_channels(), |batch| {
        let pred = match mode {
            EvalMode::Video => model.predict(batch)?,
            EvalMode::Static => model.predict(&batch.last_frame_only())?,
        };
        Ok(pred.labels)
    })
}
