//! Contrastive scoring rules for the pair classifier.
//!
//! The label-0 side (`d_prev`, samples from `t_{j-1}`) is penalised for large
//! `d`, the label-1 side (`d_next`, samples from `t_j`) for small `d`. The
//! `nu` variant weights the two class terms `1 : nu` and normalises by
//! `(1 + nu) N_b`, which reduces to the plain `1 / (2 N_b)` average at `nu = 1`.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::math;

/// Probability floor inside the logarithmic score.
pub const LOG_SCORE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRule {
    #[default]
    Brier,
    Logarithmic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_prev: Vec<f64>,
    pub grad_next: Vec<f64>,
}

fn check(d_prev: &[f64], d_next: &[f64]) -> Result<()> {
    if d_prev.len() != d_next.len() || d_prev.is_empty() {
        return Err(arg_err!(
            "need equal, non-empty batches (got {} and {})",
            d_prev.len(),
            d_next.len()
        ));
    }
    if let Some(v) = d_prev.iter().chain(d_next).find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(arg_err!("classifier output {v} outside (0, 1)"));
    }
    Ok(())
}

/// `(1 / 2N) sum [d_prev^2 + (1 - d_next)^2]`.
pub fn brier_loss(d_prev: &[f64], d_next: &[f64]) -> Result<LossOutput> {
    nu_weighted_loss(ScoreRule::Brier, d_prev, d_next, 1.0)
}

/// `(1 / 2N) sum [-log(1 - d_prev) - log(d_next)]`, probabilities floored at 1e-12.
pub fn log_loss(d_prev: &[f64], d_next: &[f64]) -> Result<LossOutput> {
    nu_weighted_loss(ScoreRule::Logarithmic, d_prev, d_next, 1.0)
}

/// `(1 / ((1 + nu) N)) sum [c(d_prev, 0) + nu c(d_next, 1)]`.
pub fn nu_weighted_loss(
    rule: ScoreRule,
    d_prev: &[f64],
    d_next: &[f64],
    nu: f64,
) -> Result<LossOutput> {
    check(d_prev, d_next)?;
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(arg_err!("nu must be positive, got {nu}"));
    }
    let scale = 1.0 / ((1.0 + nu) * d_prev.len() as f64);
    let mut total = 0.0;
    let mut grad_prev = Vec::with_capacity(d_prev.len());
    let mut grad_next = Vec::with_capacity(d_next.len());
    for (&p, &q) in d_prev.iter().zip(d_next) {
        let (cp, gp, cq, gq) = match rule {
            ScoreRule::Brier => (p * p, 2.0 * p, (1.0 - q) * (1.0 - q), -2.0 * (1.0 - q)),
            ScoreRule::Logarithmic => {
                let (a, b) = (1.0 - p, q);
                let (ca, ga) = if a > LOG_SCORE_FLOOR {
                    (-math::ln(a), 1.0 / a)
                } else {
                    (-math::ln(LOG_SCORE_FLOOR), 0.0)
                };
                let (cb, gb) = if b > LOG_SCORE_FLOOR {
                    (-math::ln(b), -1.0 / b)
                } else {
                    (-math::ln(LOG_SCORE_FLOOR), 0.0)
                };
                (ca, ga, cb, gb)
            }
        };
        total += cp + nu * cq;
        grad_prev.push(scale * gp);
        grad_next.push(scale * nu * gq);
    }
    Ok(LossOutput {
        loss: scale * total,
        grad_prev,
        grad_next,
    })
}
