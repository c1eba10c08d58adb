//! Full-batch gradient descent for the β³ and β⁴ models.
//!
//! A fit runs in two phases. During the first `n_inits` epochs only
//! abilities and difficulties move; discriminations stay at their starting
//! values. Afterwards discriminations are optimized as well, except that the
//! β⁴ sign factor `τ` can be held at its prior for the whole run.
//!
//! The step is taken on the per-cell mean of the loss, `H / (M N)`, so a
//! given learning rate behaves the same across matrix sizes.

mod gradient;
mod init;
mod objective;

use serde::{Deserialize, Serialize};

pub use gradient::{analytic_gradients, finite_diff_gradients, max_relative_error, GradientSet};
pub use init::{init_with_priors, init_without_priors, sign_prior, unit_magnitude, TAU_FLOOR};
pub use objective::{loss, predict_from_logits, pseudo_r2, LossKind};

use crate::error::{Error, Result};
use crate::irt::{NaturalParams, ResponseMatrix, UnconstrainedParams};
use gradient::{chain_factored, check_shape, logit_gradient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    /// β⁴ with data-driven starting values and the correlation sign prior.
    #[serde(rename = "beta4")]
    Beta4WithPriors,
    /// β⁴ started from random abilities and difficulties.
    #[serde(rename = "beta4-nopriors")]
    Beta4NoPriors,
    /// β³ baseline: one unconstrained discrimination per item.
    #[serde(rename = "beta3")]
    Beta3,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::Beta3,
        ModelKind::Beta4WithPriors,
        ModelKind::Beta4NoPriors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Beta4WithPriors => "beta4",
            ModelKind::Beta4NoPriors => "beta4-nopriors",
            ModelKind::Beta3 => "beta3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub n_epochs: usize,
    /// Epochs at the start of the run during which discriminations are frozen.
    pub n_inits: usize,
    /// Stop once the mean loss changes by less than this between epochs.
    pub tol: f64,
    pub seed: u64,
    pub model_kind: ModelKind,
    /// Keep `τ` at its starting value for the whole fit (β⁴ only).
    pub freeze_tau: bool,
    pub loss_kind: LossKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::for_model(ModelKind::Beta4WithPriors)
    }
}

impl FitConfig {
    /// Defaults for `kind`: η = 1, 10000 epochs, 1000 frozen epochs,
    /// tol = 1e-8, full cross-entropy; `τ` frozen only for β⁴ with priors.
    pub fn for_model(kind: ModelKind) -> Self {
        Self {
            learning_rate: 1.0,
            n_epochs: 10_000,
            n_inits: 1_000,
            tol: 1e-8,
            seed: 0,
            model_kind: kind,
            freeze_tau: kind == ModelKind::Beta4WithPriors,
            loss_kind: LossKind::FullCrossEntropy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.n_epochs == 0 {
            return Err(Error::InvalidConfig("n_epochs must be at least 1".into()));
        }
        if self.n_inits > self.n_epochs {
            return Err(Error::InvalidConfig(format!(
                "n_inits ({}) exceeds n_epochs ({})",
                self.n_inits, self.n_epochs
            )));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tol must be non-negative, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Raw parameters of the β³ baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectParams {
    pub t: Vec<f64>,
    pub d: Vec<f64>,
    pub a: Vec<f64>,
}

/// Optimizer state of either model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RawParams {
    Factored(UnconstrainedParams),
    Direct(DirectParams),
}

impl RawParams {
    pub fn t(&self) -> &[f64] {
        match self {
            RawParams::Factored(u) => &u.t,
            RawParams::Direct(p) => &p.t,
        }
    }

    pub fn d(&self) -> &[f64] {
        match self {
            RawParams::Factored(u) => &u.d,
            RawParams::Direct(p) => &p.d,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            RawParams::Factored(u) => u.is_finite(),
            RawParams::Direct(p) => [&p.t, &p.d, &p.a]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite())),
        }
    }

    pub fn discrimination(&self) -> Vec<f64> {
        match self {
            RawParams::Factored(u) => u.discrimination(),
            RawParams::Direct(p) => p.a.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model_kind: ModelKind,
    pub raw: RawParams,
    pub theta: Vec<f64>,
    pub delta: Vec<f64>,
    pub discrimination: Vec<f64>,
    /// Mean per-cell loss at the start of every epoch that ran.
    pub loss_trace: Vec<(usize, f64)>,
    pub converged_at: Option<usize>,
    /// `None` when the observed matrix is constant.
    pub pseudo_r2: Option<f64>,
    pub predicted: ResponseMatrix,
}

impl FitResult {
    /// Natural parameters of a β⁴ fit; `None` for β³.
    pub fn natural(&self) -> Option<NaturalParams> {
        match &self.raw {
            RawParams::Factored(u) => Some(u.to_natural()),
            RawParams::Direct(_) => None,
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().map(|&(_, l)| l)
    }
}

/// Starting state for `config.model_kind`.
pub fn initial_state(p: &ResponseMatrix, config: &FitConfig) -> RawParams {
    let (m, n) = p.dim();
    match config.model_kind {
        ModelKind::Beta4WithPriors => RawParams::Factored(init_with_priors(p)),
        ModelKind::Beta4NoPriors => RawParams::Factored(init_without_priors(m, n, config.seed)),
        ModelKind::Beta3 => {
            let (t, d) = init::random_logits(m, n, config.seed);
            RawParams::Direct(DirectParams {
                t,
                d,
                a: vec![1.0; n],
            })
        }
    }
}

/// Fits `config.model_kind` to `p` from its default starting state.
pub fn fit(p: &ResponseMatrix, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    fit_from(p, config, initial_state(p, config))
}

/// Runs the two-phase descent from an explicit starting state.
pub fn fit_from(p: &ResponseMatrix, config: &FitConfig, start: RawParams) -> Result<FitResult> {
    config.validate()?;
    let mut state = start;
    check_shape(p, state.t().len(), state.d().len())?;
    if let RawParams::Factored(u) = &state {
        u.check_consistent()?;
    }

    let step = config.learning_rate / (p.respondents() * p.items()) as f64;
    let mut trace = Vec::with_capacity(config.n_epochs.min(1 << 16));
    let mut converged_at = None;
    let mut previous: Option<f64> = None;

    for epoch in 0..config.n_epochs {
        let a = state.discrimination();
        let lg = logit_gradient(p, state.t(), state.d(), &a, config.loss_kind);
        let mean_loss = lg.loss * step / config.learning_rate;
        let gradient_finite = [&lg.dt, &lg.dd, &lg.da]
            .iter()
            .all(|v| v.iter().all(|g| g.is_finite()));
        if !mean_loss.is_finite() || !gradient_finite {
            return Err(Error::Diverged {
                epoch,
                last_finite: Box::new(state),
            });
        }
        trace.push((epoch, mean_loss));

        if epoch > config.n_inits {
            if let Some(prev) = previous {
                if (mean_loss - prev).abs() < config.tol {
                    converged_at = Some(epoch);
                    break;
                }
            }
        }
        previous = Some(mean_loss);

        let snapshot = state.clone();
        let discriminations_move = epoch >= config.n_inits;
        match &mut state {
            RawParams::Factored(u) => {
                let (dh_do, dh_db) = chain_factored(u, &lg.da);
                descend(&mut u.t, &lg.dt, step);
                descend(&mut u.d, &lg.dd, step);
                if discriminations_move {
                    descend(&mut u.o, &dh_do, step);
                    if !config.freeze_tau {
                        descend(&mut u.b, &dh_db, step);
                    }
                }
            }
            RawParams::Direct(dp) => {
                descend(&mut dp.t, &lg.dt, step);
                descend(&mut dp.d, &lg.dd, step);
                if discriminations_move {
                    descend(&mut dp.a, &lg.da, step);
                }
            }
        }
        if !state.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_finite: Box::new(snapshot),
            });
        }
    }

    let discrimination = state.discrimination();
    let predicted = predict_from_logits(state.t(), state.d(), &discrimination);
    let pseudo_r2 = pseudo_r2(p, &predicted).ok();
    Ok(FitResult {
        model_kind: config.model_kind,
        theta: state.t().iter().map(|&x| crate::irt::sigmoid(x)).collect(),
        delta: state.d().iter().map(|&x| crate::irt::sigmoid(x)).collect(),
        discrimination,
        raw: state,
        loss_trace: trace,
        converged_at,
        pseudo_r2,
        predicted,
    })
}

fn descend(params: &mut [f64], grad: &[f64], step: f64) {
    for (x, g) in params.iter_mut().zip(grad) {
        *x -= step * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irt::icc_expected;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(m: usize, n: usize, seed: u64) -> ResponseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..3.0)).collect();
        let clean = predict_from_logits(&t, &d, &a);
        let noisy = clean
            .values()
            .mapv(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
        ResponseMatrix::new(noisy).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = |f: fn(&mut FitConfig)| {
            let mut c = FitConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.learning_rate = 0.0));
        assert!(bad(|c| c.n_epochs = 0));
        assert!(bad(|c| c.n_inits = c.n_epochs + 1));
        assert!(bad(|c| c.tol = -1.0));
        assert!(FitConfig::for_model(ModelKind::Beta4WithPriors).freeze_tau);
        assert!(!FitConfig::for_model(ModelKind::Beta4NoPriors).freeze_tau);
    }

    #[test]
    fn one_cell_reaches_observed_value() {
        let theta: f64 = 0.8;
        let p =
            ResponseMatrix::new(Array2::from_elem((1, 1), icc_expected(theta, 0.5, 1.0))).unwrap();
        let config = FitConfig {
            n_epochs: 5000,
            n_inits: 5000,
            tol: 0.0,
            ..FitConfig::for_model(ModelKind::Beta3)
        };
        let r = fit(&p, &config).unwrap();
        assert_eq!(r.discrimination, vec![1.0]);
        let value = icc_expected(r.theta[0], r.delta[0], 1.0);
        assert!((value - 0.8).abs() < 1e-3, "{value}");

        let config = FitConfig {
            n_epochs: 20_000,
            n_inits: 20_000,
            tol: 0.0,
            ..FitConfig::default()
        };
        let r = fit(&p, &config).unwrap();
        let value = icc_expected(r.theta[0], r.delta[0], r.discrimination[0]);
        assert!((value - 0.8).abs() < 1e-3, "{value}");
    }

    #[test]
    fn discriminations_frozen_during_initial_phase() {
        let p = matrix(8, 6, 1);
        for kind in ModelKind::ALL {
            let config = FitConfig {
                n_epochs: 50,
                n_inits: 50,
                tol: 0.0,
                freeze_tau: false,
                ..FitConfig::for_model(kind)
            };
            let start = initial_state(&p, &config);
            let r = fit(&p, &config).unwrap();
            match (&start, &r.raw) {
                (RawParams::Factored(s), RawParams::Factored(e)) => {
                    assert_eq!(s.o, e.o);
                    assert_eq!(s.b, e.b);
                    assert_ne!(s.t, e.t);
                }
                (RawParams::Direct(s), RawParams::Direct(e)) => assert_eq!(s.a, e.a),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn frozen_tau_never_moves() {
        let p = matrix(10, 7, 2);
        let config = FitConfig {
            n_epochs: 300,
            n_inits: 100,
            tol: 0.0,
            ..FitConfig::default()
        };
        let RawParams::Factored(start) = initial_state(&p, &config) else {
            unreachable!()
        };
        let r = fit(&p, &config).unwrap();
        let RawParams::Factored(end) = &r.raw else {
            unreachable!()
        };
        assert_eq!(start.b, end.b);
        assert_ne!(start.o, end.o);
    }

    #[test]
    fn loss_decreases_after_unfreezing() {
        let p = matrix(30, 20, 3);
        for kind in ModelKind::ALL {
            let config = FitConfig {
                n_epochs: 700,
                n_inits: 100,
                tol: 0.0,
                ..FitConfig::for_model(kind)
            };
            let r = fit(&p, &config).unwrap();
            let at = |e: usize| r.loss_trace[e].1;
            assert!(at(600) < at(100), "{kind}");
        }
    }

    #[test]
    fn early_stop_only_after_initial_phase() {
        let p = matrix(5, 5, 4);
        let config = FitConfig {
            n_epochs: 5000,
            n_inits: 10,
            tol: 1e-3,
            ..FitConfig::default()
        };
        let r = fit(&p, &config).unwrap();
        let stop = r.converged_at.expect("loose tolerance converges");
        assert!(stop > 10);
        assert_eq!(r.loss_trace.len(), stop + 1);
    }

    #[test]
    fn pseudo_r2_matches_prediction() {
        let p = matrix(12, 9, 5);
        let r = fit(
            &p,
            &FitConfig {
                n_epochs: 500,
                n_inits: 100,
                ..FitConfig::default()
            },
        )
        .unwrap();
        let again = pseudo_r2(&p, &r.predicted).unwrap();
        assert!((again - r.pseudo_r2.unwrap()).abs() < 1e-10);
    }

    #[test]
    fn fits_are_deterministic() {
        let p = matrix(9, 4, 6);
        for kind in ModelKind::ALL {
            let config = FitConfig {
                n_epochs: 300,
                n_inits: 50,
                seed: 77,
                ..FitConfig::for_model(kind)
            };
            assert_eq!(fit(&p, &config).unwrap(), fit(&p, &config).unwrap());
        }
    }

    #[test]
    fn divergence_reports_epoch() {
        let p = matrix(6, 6, 7);
        let config = FitConfig {
            learning_rate: 1e306,
            n_epochs: 50,
            n_inits: 0,
            ..FitConfig::for_model(ModelKind::Beta3)
        };
        match fit(&p, &config) {
            Err(Error::Diverged { epoch, last_finite }) => {
                assert!(epoch > 0);
                assert!(last_finite.t().iter().all(|x| x.is_finite()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn beta3_forward_map_is_the_icc() {
        let t = vec![-1.2, 0.4, 2.0];
        let d = vec![0.3, -0.8];
        let a = vec![1.7, -0.45];
        let p_hat = predict_from_logits(&t, &d, &a);
        for (i, &ti) in t.iter().enumerate() {
            for j in 0..2 {
                let th = crate::irt::sigmoid(ti);
                let de = crate::irt::sigmoid(d[j]);
                assert!((p_hat.get(i, j) - icc_expected(th, de, a[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_mismatched_start() {
        let p = matrix(4, 4, 8);
        let start = RawParams::Direct(DirectParams {
            t: vec![0.0; 3],
            d: vec![0.0; 4],
            a: vec![1.0; 4],
        });
        assert!(matches!(
            fit_from(&p, &FitConfig::default(), start),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
