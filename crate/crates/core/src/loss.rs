//! Reference classification and regression losses, score transforms and a
//! finite-difference gradient checker.
//!
//! Losses are per proposal. Batch reduction is a separate step
//! ([`mean_reduction`]).

use alloc::vec::Vec;

use thiserror::Error;

/// Beta of the standard Smooth-L1 definition.
pub const DEFAULT_SMOOTH_L1_BETA: f64 = 1.0;
/// Entropy threshold (nats) above which a prediction is flagged unknown.
pub const DEFAULT_ENTROPY_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum LossError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    /// Target mass on a slot with zero predicted probability.
    #[error("infinite loss: target mass {target} on slot {slot} with zero probability")]
    InfiniteLoss { slot: usize, target: f64 },
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&o| libm::exp(o - max)).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `log(softmax(logits))` without forming the probabilities.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(logits.iter().map(|&o| libm::exp(o - max)).sum::<f64>());
    logits.iter().map(|&o| o - lse).collect()
}

pub fn is_probability_vector(p: &[f64], tol: f64) -> bool {
    !p.is_empty() && p.iter().all(|&v| v >= 0.0 && v.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// `-sum_c q_c ln p_c` over an explicit probability vector.
///
/// Slots with `q_c == 0` contribute nothing even when `p_c == 0`.
pub fn soft_cross_entropy(p: &[f64], q: &[f64]) -> Result<f64, LossError> {
    if p.len() != q.len() {
        return Err(LossError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut loss = 0.0;
    for (slot, (&pc, &qc)) in p.iter().zip(q).enumerate() {
        if qc == 0.0 {
            continue;
        }
        if pc <= 0.0 {
            return Err(LossError::InfiniteLoss { slot, target: qc });
        }
        loss -= qc * libm::log(pc);
    }
    Ok(loss)
}

/// Cross-entropy of `softmax(logits)` against a soft target, evaluated in
/// log space.
pub fn softmax_cross_entropy(logits: &[f64], q: &[f64]) -> Result<f64, LossError> {
    if logits.len() != q.len() {
        return Err(LossError::LengthMismatch {
            left: logits.len(),
            right: q.len(),
        });
    }
    Ok(-log_softmax(logits).iter().zip(q).map(|(lp, qc)| qc * lp).sum::<f64>())
}

/// Gradient of [`softmax_cross_entropy`] with respect to the logits:
/// `softmax(o) * sum(q) - q`, which is `softmax(o) - q` for a normalized
/// target.
pub fn softmax_cross_entropy_grad(logits: &[f64], q: &[f64]) -> Result<Vec<f64>, LossError> {
    if logits.len() != q.len() {
        return Err(LossError::LengthMismatch {
            left: logits.len(),
            right: q.len(),
        });
    }
    let mass: f64 = q.iter().sum();
    Ok(softmax(logits).iter().zip(q).map(|(p, qc)| p * mass - qc).collect())
}

/// Predicted and target box deltas for the regression loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionPair {
    pub pred: [f64; 4],
    pub target: [f64; 4],
}

fn smooth_l1_scalar(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}

/// Smooth-L1 summed over the four coordinates.
pub fn smooth_l1(pair: &RegressionPair, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    pair.pred
        .iter()
        .zip(&pair.target)
        .map(|(b, t)| smooth_l1_scalar(b - t, beta))
        .sum()
}

/// Gradient of [`smooth_l1`] with respect to the prediction.
pub fn smooth_l1_grad(pair: &RegressionPair, beta: f64) -> [f64; 4] {
    let mut g = [0.0; 4];
    for (i, gi) in g.iter_mut().enumerate() {
        let d = pair.pred[i] - pair.target[i];
        *gi = if d.abs() < beta { d / beta } else { d.signum() };
    }
    g
}

/// Relative weights for the multi-task sum. Unit weights by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rpn: f64,
    pub reg: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rpn: 1.0,
            reg: 1.0,
            cls: 1.0,
        }
    }
}

/// `L = L_rpn + L_reg + L_cls`.
pub fn total_loss(rpn: f64, reg: f64, cls: f64) -> f64 {
    weighted_total_loss(rpn, reg, cls, LossWeights::default())
}

pub fn weighted_total_loss(rpn: f64, reg: f64, cls: f64, w: LossWeights) -> f64 {
    w.rpn * rpn + w.reg * reg + w.cls * cls
}

/// Mean over sampled proposals; 0 for an empty batch.
pub fn mean_reduction(per_proposal: &[f64]) -> f64 {
    if per_proposal.is_empty() {
        0.0
    } else {
        per_proposal.iter().sum::<f64>() / per_proposal.len() as f64
    }
}

/// `w(p) = (1 - p)^alpha * p`. Peaks at `p = 1 / (1 + alpha)`.
pub fn weight_fn(p: f64, alpha: f64) -> f64 {
    libm::pow(1.0 - p, alpha) * p
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * libm::log(v)).sum::<f64>()
}

/// True when the prediction's entropy exceeds `threshold`.
pub fn entropy_unknown_flag(p: &[f64], threshold: f64) -> bool {
    entropy(p) > threshold
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|)` over components; components where both
/// are exactly zero contribute 0.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale == 0.0 {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Compares an analytic gradient against central differences of `f`.
pub fn grad_check<F>(f: F, analytic: &[f64], x: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    max_relative_error(analytic, &central_difference(f, x, h))
}
