//! Synthetic ground truth and simulated response matrices.
//!
//! Each replication owns one seed. Two ChaCha streams are derived from it:
//! stream 0 draws the true parameters and stream 1 draws the responses, so
//! responses can be regenerated without touching the parameter draws.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::{beta_shape_params, sigmoid, ResponseMatrix};

/// Sampled abilities and difficulties are kept this far from 0 and 1.
pub const PARAM_EPS: f64 = 1e-9;

const PARAM_STREAM: u64 = 0;
const RESPONSE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaShape {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaShape {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub respondents: usize,
    pub items: usize,
    /// Beta draws averaged into each response cell.
    pub n_draws: usize,
    /// Variance of the normal discrimination prior, centred at 1.
    pub sigma0_sq: f64,
    pub seed: u64,
    pub ability_dist: BetaShape,
    pub difficulty_dist: BetaShape,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            respondents: 20,
            items: 100,
            n_draws: 100,
            sigma0_sq: 1.0,
            seed: 0,
            ability_dist: BetaShape::default(),
            difficulty_dist: BetaShape::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.respondents == 0 || self.items == 0 {
            return bad(format!(
                "shape must be positive, got {}x{}",
                self.respondents, self.items
            ));
        }
        if self.n_draws == 0 {
            return bad("n_draws must be at least 1".into());
        }
        if !(self.sigma0_sq > 0.0 && self.sigma0_sq.is_finite()) {
            return bad(format!(
                "sigma0_sq must be positive, got {}",
                self.sigma0_sq
            ));
        }
        for (name, s) in [
            ("ability_dist", self.ability_dist),
            ("difficulty_dist", self.difficulty_dist),
        ] {
            if !(s.alpha > 0.0 && s.beta > 0.0 && s.alpha.is_finite() && s.beta.is_finite()) {
                return bad(format!("{name} shapes must be positive"));
            }
        }
        Ok(())
    }

    fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Generating parameters of a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub theta: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
}

/// Log of a Gamma(shape, 1) draw. Shapes below one use
/// `G(k) = G(k + 1) · U^(1/k)`, which stays representable in log space even
/// when the draw itself underflows.
fn ln_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("shape is positive and finite");
        g.sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("shape is positive and finite");
        // 1 - U lies in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        g.sample(rng).ln() + u.ln() / shape
    }
}

/// One draw from Beta(`alpha`, `beta`) as `X / (X + Y)` with independent
/// Gamma variates, valid for any positive shapes.
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    debug_assert!(alpha > 0.0 && beta > 0.0, "alpha={alpha} beta={beta}");
    let lx = ln_gamma_draw(alpha, rng);
    let ly = ln_gamma_draw(beta, rng);
    sigmoid(lx - ly)
}

/// Abilities, then difficulties, then discriminations, from stream 0.
pub fn sample_true_params(cfg: &GenConfig) -> Result<TrueParams> {
    cfg.validate()?;
    let mut rng = cfg.stream(PARAM_STREAM);
    let unit = |shape: BetaShape, rng: &mut ChaCha8Rng| {
        sample_beta(shape.alpha, shape.beta, rng).clamp(PARAM_EPS, 1.0 - PARAM_EPS)
    };
    let theta = (0..cfg.respondents)
        .map(|_| unit(cfg.ability_dist, &mut rng))
        .collect();
    let delta = (0..cfg.items)
        .map(|_| unit(cfg.difficulty_dist, &mut rng))
        .collect();
    let normal = Normal::new(1.0, cfg.sigma0_sq.sqrt()).expect("validated variance");
    let a = (0..cfg.items).map(|_| normal.sample(&mut rng)).collect();
    Ok(TrueParams { theta, delta, a })
}

/// Each cell is the mean of `n_draws` Beta(α_ij, β_ij) samples, generated in
/// row-major order from stream 1.
pub fn generate_responses(tp: &TrueParams, cfg: &GenConfig) -> Result<ResponseMatrix> {
    cfg.validate()?;
    if tp.a.len() != tp.delta.len() {
        return Err(Error::LengthMismatch {
            left: tp.delta.len(),
            right: tp.a.len(),
        });
    }
    let mut rng = cfg.stream(RESPONSE_STREAM);
    let (m, n) = (tp.theta.len(), tp.delta.len());
    let mut cells = Vec::with_capacity(m * n);
    for &theta in &tp.theta {
        for (&delta, &a) in tp.delta.iter().zip(&tp.a) {
            let (alpha, beta) = beta_shape_params(theta, delta, a);
            let total: f64 = (0..cfg.n_draws)
                .map(|_| sample_beta(alpha, beta, &mut rng))
                .sum();
            cells.push(total / cfg.n_draws as f64);
        }
    }
    let values = Array2::from_shape_vec((m, n), cells).expect("m*n cells");
    ResponseMatrix::new(values)
}

/// Ground truth and responses for `cfg.respondents × cfg.items`.
pub fn simulate(cfg: &GenConfig) -> Result<(TrueParams, ResponseMatrix)> {
    let tp = sample_true_params(cfg)?;
    let p = generate_responses(&tp, cfg)?;
    Ok((tp, p))
}
