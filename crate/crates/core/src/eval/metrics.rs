use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Result, SanError};

/// Counts indexed by (true class, predicted class), class 0 = fake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }
}

pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(SanError::dim("confusion", &[predictions.len()], &[labels.len()]));
    }
    if labels.is_empty() {
        return Err(SanError::InsufficientData("no predictions to score".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, l) in predictions.iter().zip(labels) {
        cm.counts[l.index()][p.index()] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1_fake: f64,
    pub f1_real: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl Metrics {
    pub const FIELDS: [&'static str; 5] = ["accuracy", "f1_fake", "f1_real", "macro_f1", "weighted_f1"];

    pub fn as_array(&self) -> [f64; 5] {
        [self.accuracy, self.f1_fake, self.f1_real, self.macro_f1, self.weighted_f1]
    }

    pub fn from_array(v: [f64; 5]) -> Metrics {
        Metrics {
            accuracy: v[0],
            f1_fake: v[1],
            f1_real: v[2],
            macro_f1: v[3],
            weighted_f1: v[4],
        }
    }

    pub fn get(&self, field: &str) -> Option<f64> {
        Self::FIELDS.iter().position(|f| *f == field).map(|i| self.as_array()[i])
    }
}

/// Per-class F1 is 0 when precision and recall are both 0 or undefined.
pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let total = cm.total();
    let f1 = |k: usize| {
        let tp = cm.counts[k][k] as f64;
        let predicted = (cm.counts[0][k] + cm.counts[1][k]) as f64;
        let actual = (cm.counts[k][0] + cm.counts[k][1]) as f64;
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = if actual > 0.0 { tp / actual } else { 0.0 };
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    };
    let (f_fake, f_real) = (f1(0), f1(1));
    let support = |k: usize| (cm.counts[k][0] + cm.counts[k][1]) as f64;
    let n = total as f64;
    Metrics {
        accuracy: cm.correct() as f64 / n,
        f1_fake: f_fake,
        f1_real: f_real,
        macro_f1: (f_fake + f_real) / 2.0,
        weighted_f1: (support(0) * f_fake + support(1) * f_real) / n,
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // rounding in the sum must not push the mean outside the observed range
    let mean = (values.iter().sum::<f64>() / n).clamp(lo, hi);
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
