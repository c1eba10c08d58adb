//! Recovery statistics: how well fitted parameters reproduce the ones that
//! generated the data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::synth::TrueParams;

fn same_length(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation. Undefined for fewer than two points or when
/// either vector is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    same_length(x, y)?;
    if x.len() < 2 {
        return Err(Error::Undefined("correlation needs at least two points"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation of a constant vector"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Residual and total sums of squares of `est` against `truth`.
fn sums_of_squares(truth: &[f64], est: &[f64]) -> Result<(f64, f64)> {
    same_length(truth, est)?;
    let m = mean(truth);
    let u = truth.iter().zip(est).map(|(t, e)| (t - e).powi(2)).sum();
    let v: f64 = truth.iter().map(|t| (t - m).powi(2)).sum();
    if v == 0.0 || truth.is_empty() {
        return Err(Error::Undefined("true values are constant"));
    }
    Ok((u, v))
}

/// Relative squared error `Σ(true - est)² / Σ(true - mean(true))²`.
pub fn rse(truth: &[f64], est: &[f64]) -> Result<f64> {
    let (u, v) = sums_of_squares(truth, est)?;
    Ok(u / v)
}

/// `1 - rse`, with the true values as the reference.
pub fn r_squared(truth: &[f64], est: &[f64]) -> Result<f64> {
    let (u, v) = sums_of_squares(truth, est)?;
    Ok(1.0 - u / v)
}

/// `(flipped, compared)`: pairs with opposite signs, out of the pairs where
/// neither value is zero.
pub fn sign_flips(true_a: &[f64], est_a: &[f64]) -> Result<(usize, usize)> {
    same_length(true_a, est_a)?;
    let mut flipped = 0;
    let mut compared = 0;
    for (&t, &e) in true_a.iter().zip(est_a) {
        if t == 0.0 || e == 0.0 {
            continue;
        }
        compared += 1;
        if t.signum() != e.signum() {
            flipped += 1;
        }
    }
    Ok((flipped, compared))
}

/// Fraction of discriminations estimated with the wrong sign.
pub fn sign_flip_rate(true_a: &[f64], est_a: &[f64]) -> Result<f64> {
    let (flipped, compared) = sign_flips(true_a, est_a)?;
    Ok(if compared == 0 {
        0.0
    } else {
        flipped as f64 / compared as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub n_resamples: usize,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Linear-interpolation quantile of sorted data, `q` in [0, 1].
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(
    values: &[f64],
    level: f64,
    n_resamples: usize,
    seed: u64,
) -> Result<ConfidenceInterval> {
    if values.len() < 2 {
        return Err(Error::Undefined("bootstrap needs at least two values"));
    }
    if !(level > 0.0 && level < 1.0) || n_resamples == 0 {
        return Err(Error::InvalidConfig(format!(
            "bootstrap level {level} / resamples {n_resamples}"
        )));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            quantity: "bootstrap value",
            index,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    // offsets from the first value keep the mean of a constant sample exact
    let origin = values[0];
    let mut means: Vec<f64> = (0..n_resamples)
        .map(|_| {
            let offset: f64 = (0..n)
                .map(|_| values[rng.random_range(0..n)] - origin)
                .sum();
            origin + offset / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(ConfidenceInterval {
        lo: quantile_sorted(&means, tail),
        hi: quantile_sorted(&means, 1.0 - tail),
        level,
        n_resamples,
    })
}

/// Recovery of one fitted model against the parameters that generated its
/// data. Correlations and RSEs are `None` when undefined (constant vectors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub rho_theta: Option<f64>,
    pub rho_delta: Option<f64>,
    pub rho_a: Option<f64>,
    pub rse_theta: Option<f64>,
    pub rse_delta: Option<f64>,
    pub rse_a: Option<f64>,
    pub flipped: usize,
    pub compared: usize,
    pub flip_rate: f64,
    pub pseudo_r2_fit: Option<f64>,
}

impl RecoveryStats {
    pub fn compute(truth: &TrueParams, fitted: &FitResult) -> Result<Self> {
        let (flipped, compared) = sign_flips(&truth.a, &fitted.discrimination)?;
        Ok(Self {
            rho_theta: pearson(&truth.theta, &fitted.theta).ok(),
            rho_delta: pearson(&truth.delta, &fitted.delta).ok(),
            rho_a: pearson(&truth.a, &fitted.discrimination).ok(),
            rse_theta: rse(&truth.theta, &fitted.theta).ok(),
            rse_delta: rse(&truth.delta, &fitted.delta).ok(),
            rse_a: rse(&truth.a, &fitted.discrimination).ok(),
            flipped,
            compared,
            flip_rate: if compared == 0 {
                0.0
            } else {
                flipped as f64 / compared as f64
            },
            pseudo_r2_fit: fitted.pseudo_r2,
        })
    }
}
