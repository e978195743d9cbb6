//! Cross-entropy over all current logits, temperature distillation over the
//! old-class logits, and their convex combination.
//!
//! The old model's distribution is a fixed target: no gradient is returned
//! for it. The distillation gradient is `(π − π̂) / T` with no `T²` rescale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nncore::{log_sum_exp_t, softmax_t};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("label {label} out of range for {classes} logits")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("old logits have length {old}, new logits {new}")]
    LengthMismatch { old: usize, new: usize },
    #[error("empty logit vector")]
    Empty,
    #[error("invalid loss setting: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the distillation term.
    pub alpha: f64,
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.5, temperature: 2.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(LossError::InvalidConfig("alpha must lie in [0, 1]"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(LossError::InvalidConfig("temperature must be > 0"));
        }
        Ok(())
    }
}

/// A loss value with its gradient w.r.t. the logits it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// `−log softmax(o)[y]`, gradient `softmax(o) − onehot(y)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<LossGrad, LossError> {
    if label >= logits.len() {
        return Err(LossError::LabelOutOfRange { label, classes: logits.len() });
    }
    let value = log_sum_exp_t(logits, 1.0) - logits[label];
    let mut grad = softmax_t(logits, 1.0).map_err(|_| LossError::Empty)?;
    grad[label] -= 1.0;
    Ok(LossGrad { value: value.max(0.0), grad })
}

/// `Σ_k −π̂_k log π_k` with both distributions at temperature `T`; gradient
/// `(π − π̂)/T` w.r.t. the new logits.
pub fn distillation(old_logits: &[f64], new_logits: &[f64], temperature: f64) -> Result<LossGrad, LossError> {
    if old_logits.len() != new_logits.len() {
        return Err(LossError::LengthMismatch { old: old_logits.len(), new: new_logits.len() });
    }
    let target = softmax_t(old_logits, temperature).map_err(|_| LossError::Empty)?;
    let current = softmax_t(new_logits, temperature).map_err(|_| LossError::Empty)?;
    let lse = log_sum_exp_t(new_logits, temperature);
    let value: f64 = target
        .iter()
        .zip(new_logits)
        .map(|(&t, &o)| -t * (o / temperature - lse))
        .sum();
    let grad = current.iter().zip(&target).map(|(p, q)| (p - q) / temperature).collect();
    Ok(LossGrad { value: value.max(0.0), grad })
}

/// Shannon entropy (nats) of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

pub fn combined(distill: f64, cross: f64, alpha: f64) -> f64 {
    alpha * distill + (1.0 - alpha) * cross
}

/// Per-sample objective for one phase. `old_logits` is the frozen model's
/// output over the old classes (`None` in the first phase, which forces
/// `alpha = 0`); it is compared against the leading `old_logits.len()`
/// entries of `logits`.
pub fn phase_objective(
    logits: &[f64],
    label: usize,
    old_logits: Option<&[f64]>,
    cfg: &LossConfig,
) -> Result<LossGrad, LossError> {
    let ce = cross_entropy(logits, label)?;
    let Some(old) = old_logits else {
        return Ok(ce);
    };
    if old.len() > logits.len() {
        return Err(LossError::LengthMismatch { old: old.len(), new: logits.len() });
    }
    let kd = distillation(old, &logits[..old.len()], cfg.temperature)?;
    let alpha = cfg.alpha;
    let mut grad: Vec<f64> = ce.grad.iter().map(|g| (1.0 - alpha) * g).collect();
    for (g, d) in grad.iter_mut().zip(&kd.grad) {
        *g += alpha * d;
    }
    Ok(LossGrad { value: combined(kd.value, ce.value, alpha), grad })
}
