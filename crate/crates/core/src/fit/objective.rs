//! Loss, prediction and goodness of fit.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::{icc_from_logits, softplus, ResponseMatrix, EXPONENT_CAP};

/// Which cross-entropy the fit minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `-ΣΣ p ln p̂`. Strictly decreasing in every prediction, so it has no
    /// interior optimum; kept for comparison runs.
    PaperEq6,
    /// `-ΣΣ [p ln p̂ + (1-p) ln(1-p̂)]`, stationary at `p̂ = p`.
    #[default]
    FullCrossEntropy,
}

impl LossKind {
    /// Loss contribution of one cell with observed `p` and prediction logit
    /// `z`, together with its derivative in `z`. Shares one `exp(-|z|)`
    /// between `ln σ(±z)` and `σ(±z)`.
    #[inline]
    pub(crate) fn cell(self, p: f64, z: f64) -> (f64, f64) {
        if z.abs() > EXPONENT_CAP {
            let z = z.clamp(-EXPONENT_CAP, EXPONENT_CAP);
            return (self.cell_loss(p, z), 0.0);
        }
        let e = (-z.abs()).exp();
        let log1p_e = e.ln_1p();
        // softplus(z) = max(z, 0) + ln(1 + e^-|z|)
        let sp_pos = z.max(0.0) + log1p_e;
        let sp_neg = (-z).max(0.0) + log1p_e;
        let inv = 1.0 / (1.0 + e);
        let (sig_pos, sig_neg) = if z >= 0.0 {
            (inv, e * inv)
        } else {
            (e * inv, inv)
        };
        match self {
            LossKind::PaperEq6 => (p * sp_neg, -p * sig_neg),
            LossKind::FullCrossEntropy => (p * sp_neg + (1.0 - p) * sp_pos, sig_pos - p),
        }
    }

    /// Loss contribution of one cell, `-ln σ(z) = softplus(-z)`.
    #[inline]
    pub(crate) fn cell_loss(self, p: f64, z: f64) -> f64 {
        let z = z.clamp(-EXPONENT_CAP, EXPONENT_CAP);
        match self {
            LossKind::PaperEq6 => p * softplus(-z),
            LossKind::FullCrossEntropy => p * softplus(-z) + (1.0 - p) * softplus(z),
        }
    }
}

/// Summed cross-entropy between observed and predicted responses.
pub fn loss(p: &ResponseMatrix, p_hat: &ResponseMatrix, kind: LossKind) -> Result<f64> {
    p.check_same_shape(p_hat)?;
    let total = p
        .values()
        .iter()
        .zip(p_hat.values())
        .map(|(&obs, &pred)| match kind {
            LossKind::PaperEq6 => -obs * pred.ln(),
            LossKind::FullCrossEntropy => -obs * pred.ln() - (1.0 - obs) * (-pred).ln_1p(),
        })
        .sum();
    Ok(total)
}

/// Loss evaluated from logit-scale parameters, stable for saturated cells.
pub(crate) fn loss_from_logits(
    p: &ResponseMatrix,
    t: &[f64],
    d: &[f64],
    a: &[f64],
    kind: LossKind,
) -> f64 {
    let mut total = 0.0;
    for (i, row) in p.values().outer_iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            total += kind.cell_loss(obs, a[j] * (t[i] - d[j]));
        }
    }
    total
}

/// Predicted responses `p̂_ij` for logit abilities `t`, logit difficulties
/// `d` and discriminations `a`.
pub fn predict_from_logits(t: &[f64], d: &[f64], a: &[f64]) -> ResponseMatrix {
    let values = Array2::from_shape_fn((t.len(), d.len()), |(i, j)| {
        icc_from_logits(t[i], d[j], a[j])
    });
    ResponseMatrix::from_predictions(values)
}

/// `1 - u/v` with `u` the residual sum of squares and `v` the sum of squares
/// around the grand mean of `p`.
pub fn pseudo_r2(p: &ResponseMatrix, p_hat: &ResponseMatrix) -> Result<f64> {
    p.check_same_shape(p_hat)?;
    let mean = p.mean();
    let (mut u, mut v) = (0.0, 0.0);
    for (&obs, &pred) in p.values().iter().zip(p_hat.values()) {
        u += (obs - pred).powi(2);
        v += (obs - mean).powi(2);
    }
    if v == 0.0 {
        return Err(Error::Undefined("observed responses are constant"));
    }
    Ok(1.0 - u / v)
}
