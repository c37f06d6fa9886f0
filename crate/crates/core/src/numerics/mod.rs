//! Differentiable building blocks: tensors, a reverse-mode tape, parameter
//! storage, plain SGD, and a finite-difference gradient checker.

mod params;
mod tape;
mod tensor;

pub use params::{Gradients, ParamEntry, ParamGroup, ParamId, ParamSets};
pub use tape::{softmax_rows, GrlMode, Neighborhoods, SparseMatrix, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Result, SanError};

/// `p <- p - eta * grad(p)` for every trainable parameter.
///
/// Gradient reversal is already baked into `grads` by the tape, so this is a
/// plain descent step.
pub fn sgd_step(params: &mut ParamSets, grads: &Gradients, eta: f64) -> Result<()> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(SanError::Config(format!("learning rate must be finite and >= 0, got {eta}")));
    }
    // Check everything before mutating anything.
    let ids: Vec<ParamId> = params.ids().filter(|&id| params.is_trainable(id)).collect();
    for &id in &ids {
        match grads.get(id) {
            None => {
                return Err(SanError::Consistency(format!(
                    "no gradient recorded for parameter {}",
                    params.entry(id).name
                )))
            }
            Some(g) if g.shape() != params.get(id).shape() => {
                return Err(SanError::dim("sgd_step", params.get(id).shape(), g.shape()))
            }
            Some(_) => {}
        }
    }
    if eta == 0.0 {
        return Ok(());
    }
    for id in ids {
        let g = grads.get(id).expect("checked above");
        for (p, d) in params.get_mut(id).values_mut().iter_mut().zip(g.values()) {
            *p -= eta * d;
        }
    }
    Ok(())
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name, flat index, analytic and numeric derivative at the
    /// worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let checked = self.checked + other.checked;
        let pick_other = other.max_rel_error > self.max_rel_error;
        let base = if pick_other { other } else { self };
        GradCheckReport { checked, ..base }
    }
}

/// Compares `analytic` against central differences of `loss_fn` for every
/// scalar parameter in the listed groups.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F>(
    params: &ParamSets,
    analytic: &Gradients,
    epsilon: f64,
    groups: &[ParamGroup],
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSets) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(SanError::Config(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let ids: Vec<ParamId> = params
        .ids()
        .filter(|&id| groups.contains(&params.entry(id).group))
        .collect();
    for id in ids {
        for k in 0..params.get(id).len() {
            let original = params.get(id).values()[k];
            probe.get_mut(id).values_mut()[k] = original + epsilon;
            let plus = loss_fn(&probe)?;
            probe.get_mut(id).values_mut()[k] = original - epsilon;
            let minus = loss_fn(&probe)?;
            probe.get_mut(id).values_mut()[k] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(SanError::Numeric(format!(
                    "loss not finite while perturbing {}[{k}]",
                    params.entry(id).name
                )));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let exact = analytic.get(id).map(|g| g.values()[k]).unwrap_or(0.0);
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            let rel = (exact - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((params.entry(id).name.clone(), k, exact, numeric));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
