//! Losses and training loops for the structure-adversarial objective and
//! the plain classification baseline.

mod objective;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Label, NewsSample};
use crate::error::{Result, SanError};
use crate::models::{Architecture, Detector, EncoderKind, Prediction, DEFAULT_HIDDEN_DIM};
use crate::numerics::{sgd_step, ParamGroup, ParamSets};

pub use objective::{san_gradcheck, BatchObjective, GradcheckBatch, ObjectiveParts};

/// Probability floor used before every logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

/// Grid of stripped-copy weights searched by default.
pub const LAMBDA_GRID: [f64; 6] = [0.1, 1.0, 1.5, 2.0, 5.0, 10.0];

/// Which copy of the held-out training samples drives model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    /// Validation samples are stripped of their trees, like the test set.
    Cold,
    /// Validation samples keep their trees.
    Warm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub encoder: EncoderKind,
    pub hidden_dim: usize,
    pub eta: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adversarial: bool,
    pub grl_coeff: f64,
    pub validation_fraction: f64,
    /// Stop after this many epochs without a better validation accuracy.
    /// Zero disables early stopping.
    pub patience: usize,
    pub validation_mode: ValidationMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            encoder: EncoderKind::Gcn,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            eta: 0.005,
            lambda: 1.0,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            adversarial: true,
            grl_coeff: 1.0,
            validation_fraction: 0.1,
            patience: 30,
            validation_mode: ValidationMode::Cold,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SanError::Config(m));
        // Zero is allowed: it yields a run that never moves the weights.
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad(format!("eta must be finite and >= 0, got {}", self.eta));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.grl_coeff >= 0.0) || !self.grl_coeff.is_finite() {
            return bad(format!("grl_coeff must be finite and >= 0, got {}", self.grl_coeff));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must be in [0, 1), got {}", self.validation_fraction));
        }
        Ok(())
    }

    pub fn architecture(&self, d_in: usize) -> Result<Architecture> {
        Architecture::new(self.encoder, d_in, self.hidden_dim)
    }

    /// True when the stripped copy contributes nothing and can be skipped.
    fn uses_stripped_copy(&self) -> bool {
        self.lambda != 0.0
    }
}

/// Mean cross-entropy of probability vectors against one-hot labels.
pub fn loss_cls(probs: &[[f64; 2]], labels: &[Label]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(SanError::dim("loss_cls", &[probs.len()], &[labels.len()]));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, l)| -clamp(p[l.index()]).ln())
        .sum();
    Ok(total / probs.len() as f64)
}

/// Mean binary cross-entropy of structure probabilities against `y_d`
/// (`true` = computed with the tree).
pub fn loss_disc(structure_probs: &[f64], with_structure: &[bool]) -> Result<f64> {
    if structure_probs.len() != with_structure.len() || structure_probs.is_empty() {
        return Err(SanError::dim("loss_disc", &[structure_probs.len()], &[with_structure.len()]));
    }
    let total: f64 = structure_probs
        .iter()
        .zip(with_structure)
        .map(|(&p, &y)| {
            let p = clamp(p);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / structure_probs.len() as f64)
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub fn loss_san(l_cls: f64, l_d: f64) -> f64 {
    l_cls - l_d
}

pub fn total_loss(san_full: f64, san_stripped: f64, lambda: f64) -> f64 {
    san_full + lambda * san_stripped
}

/// The four loss components plus the derived combinations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub cls_full: f64,
    pub cls_stripped: f64,
    pub disc_full: f64,
    pub disc_stripped: f64,
    pub san_full: f64,
    pub san_stripped: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn new(cls_full: f64, cls_stripped: f64, disc_full: f64, disc_stripped: f64, lambda: f64) -> Self {
        let san_full = loss_san(cls_full, disc_full);
        let san_stripped = loss_san(cls_stripped, disc_stripped);
        LossBundle {
            cls_full,
            cls_stripped,
            disc_full,
            disc_stripped,
            san_full,
            san_stripped,
            total: total_loss(san_full, san_stripped, lambda),
        }
    }
}

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cls_full: f64,
    pub cls_stripped: Option<f64>,
    pub disc_full: Option<f64>,
    pub disc_stripped: Option<f64>,
    pub total: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub detector: Detector,
    pub trace: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub best_val_acc: Option<f64>,
}

impl TrainOutcome {
    pub fn write_trace<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.trace {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| SanError::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_trace(&mut w).map_err(|e| SanError::io(path, e))?;
        w.flush().map_err(|e| SanError::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    San,
    Vanilla,
}

/// Trains with the structure-adversarial objective on the full training
/// samples and their stripped twins.
pub fn train_san(train: &[NewsSample], config: &TrainingConfig) -> Result<TrainOutcome> {
    run(train, config, Mode::San, &mut |_, _| {})
}

/// Trains the classifier on the full training samples only.
pub fn train_vanilla(train: &[NewsSample], config: &TrainingConfig) -> Result<TrainOutcome> {
    run(train, config, Mode::Vanilla, &mut |_, _| {})
}

/// Like [`train_san`] / [`train_vanilla`], calling `observer` with the live
/// parameters after every epoch.
pub fn train_observed(
    train: &[NewsSample],
    config: &TrainingConfig,
    adversarial_objective: bool,
    observer: &mut dyn FnMut(usize, &ParamSets),
) -> Result<TrainOutcome> {
    let mode = if adversarial_objective { Mode::San } else { Mode::Vanilla };
    run(train, config, mode, observer)
}

fn run(
    train: &[NewsSample],
    config: &TrainingConfig,
    mode: Mode,
    observer: &mut dyn FnMut(usize, &ParamSets),
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = train
        .first()
        .ok_or_else(|| SanError::InsufficientData("training set is empty".into()))?;
    let arch = config.architecture(first.x.len())?;
    let mut detector = Detector::new(arch, config.seed);
    let adversarial = mode == Mode::San && config.adversarial;
    let stripped = mode == Mode::San && config.uses_stripped_copy();
    let lambda = if stripped { config.lambda } else { 0.0 };
    if !adversarial {
        detector.params.freeze(ParamGroup::Discriminator);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (config.validation_fraction * train.len() as f64).round() as usize;
    let n_val = n_val.min(train.len() - 1);
    let (val_idx, fit_idx) = order.split_at(n_val);
    let fit: Vec<&NewsSample> = fit_idx.iter().map(|&i| &train[i]).collect();
    let val: Vec<NewsSample> = val_idx
        .iter()
        .map(|&i| match config.validation_mode {
            ValidationMode::Cold => train[i].stripped(),
            ValidationMode::Warm => train[i].clone(),
        })
        .collect();
    let fit_stripped: Vec<NewsSample> = if stripped {
        fit.iter().map(|s| s.stripped()).collect()
    } else {
        Vec::new()
    };

    let objective = BatchObjective {
        arch,
        lambda,
        grl_coeff: config.grl_coeff,
        adversarial,
    };
    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamSets)> = None;
    let mut since_best = 0;
    let mut positions: Vec<usize> = (0..fit.len()).collect();
    for epoch in 1..=config.epochs {
        positions.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        for chunk in positions.chunks(config.batch_size) {
            let full: Vec<&NewsSample> = chunk.iter().map(|&i| fit[i]).collect();
            let bare: Vec<&NewsSample> = if stripped {
                chunk.iter().map(|&i| &fit_stripped[i]).collect()
            } else {
                Vec::new()
            };
            let parts = objective.evaluate(&detector.params, &full, &bare)?;
            let w = chunk.len() as f64;
            let values = [parts.cls_full, parts.cls_stripped, parts.disc_full, parts.disc_stripped, parts.total];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(SanError::Numeric(format!(
                    "loss diverged in epoch {epoch}: cls_full={} cls_stripped={} disc_full={} disc_stripped={}; last trace record: {}",
                    parts.cls_full,
                    parts.cls_stripped,
                    parts.disc_full,
                    parts.disc_stripped,
                    trace
                        .last()
                        .map(|r| serde_json::to_string(r).unwrap_or_default())
                        .unwrap_or_else(|| "none".into())
                )));
            }
            for (s, v) in sums.iter_mut().zip(values) {
                *s += w * v;
            }
            sgd_step(&mut detector.params, &parts.gradients, config.eta)?;
        }
        let n = fit.len() as f64;
        let val_acc = if val.is_empty() {
            None
        } else {
            Some(accuracy(&detector.predict(&val)?, &val))
        };
        trace.push(EpochRecord {
            epoch,
            cls_full: sums[0] / n,
            cls_stripped: stripped.then(|| sums[1] / n),
            disc_full: adversarial.then(|| sums[2] / n),
            disc_stripped: (adversarial && stripped).then(|| sums[3] / n),
            total: sums[4] / n,
            val_acc,
        });
        observer(epoch, &detector.params);
        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, detector.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if config.patience > 0 && since_best >= config.patience {
                    break;
                }
            }
        }
    }
    let (best_epoch, best_val_acc) = match best {
        Some((acc, epoch, params)) => {
            detector.params = params;
            (epoch, Some(acc))
        }
        None => (trace.len(), None),
    };
    detector.params.unfreeze(ParamGroup::Discriminator);
    Ok(TrainOutcome {
        detector,
        trace,
        best_epoch,
        best_val_acc,
    })
}

/// Fraction of predictions whose arg-max label matches.
pub fn accuracy(predictions: &[Prediction], samples: &[NewsSample]) -> f64 {
    let hits = predictions
        .iter()
        .zip(samples)
        .filter(|(p, s)| p.label() == s.label)
        .count();
    hits as f64 / samples.len().max(1) as f64
}

/// Labels, probabilities and hidden representations for `samples`.
pub fn predict(detector: &Detector, samples: &[NewsSample]) -> Result<Vec<Prediction>> {
    detector.predict(samples)
}
