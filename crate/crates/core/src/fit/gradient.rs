//! Analytic gradients of the loss and a central-difference oracle.
//!
//! Every cell depends on the parameters only through
//! `z_ij = a_j (t_i - d_j)`, because `logit θ_i = t_i` and
//! `logit δ_j = d_j`. In the factored notation `Φ(θ_i, δ_j)^{a_j} = e^{-z_ij}`
//! and the link factor `Θ(θ_i) ∂θ_i/∂t_i` is identically 1, so with
//! `g_ij = ∂H/∂z_ij`:
//!
//! ```text
//! ∂H/∂t_i = Σ_j g_ij a_j
//! ∂H/∂d_j = -a_j Σ_i g_ij
//! ∂H/∂a_j = Σ_i g_ij (t_i - d_j)
//! ∂H/∂o_j = ∂H/∂a_j · τ_j σ(o_j)
//! ∂H/∂b_j = ∂H/∂a_j · ω_j (1 - τ_j²)
//! ```

use serde::{Deserialize, Serialize};

use super::objective::{loss_from_logits, LossKind};
use crate::error::{Error, Result};
use crate::irt::{sigmoid, softplus, ResponseMatrix, UnconstrainedParams};

/// Partial derivatives of the loss with respect to each raw parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub dh_dt: Vec<f64>,
    pub dh_dd: Vec<f64>,
    pub dh_do: Vec<f64>,
    pub dh_db: Vec<f64>,
}

impl GradientSet {
    /// All partials in `t, d, o, b` order.
    pub fn flatten(&self) -> Vec<f64> {
        [&self.dh_dt, &self.dh_dd, &self.dh_do, &self.dh_db]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }
}

/// Loss and its gradient with respect to `(t, d, a)`.
#[derive(Debug, Clone)]
pub(crate) struct LogitGradient {
    pub loss: f64,
    pub dt: Vec<f64>,
    pub dd: Vec<f64>,
    pub da: Vec<f64>,
}

/// One pass over the grid: accumulates the loss, the row sums for `t` and
/// the column sums for `d` and `a`. Summation order is fixed (row-major).
pub(crate) fn logit_gradient(
    p: &ResponseMatrix,
    t: &[f64],
    d: &[f64],
    a: &[f64],
    kind: LossKind,
) -> LogitGradient {
    let n = d.len();
    let mut loss = 0.0;
    let mut dt = vec![0.0; t.len()];
    let mut col_g = vec![0.0; n];
    let mut col_gt = vec![0.0; n];
    for (i, row) in p.values().outer_iter().enumerate() {
        let ti = t[i];
        let mut acc = 0.0;
        for (j, &obs) in row.iter().enumerate() {
            let z = a[j] * (ti - d[j]);
            let (l, g) = kind.cell(obs, z);
            loss += l;
            acc += g * a[j];
            col_g[j] += g;
            col_gt[j] += g * ti;
        }
        dt[i] = acc;
    }
    let dd = (0..n).map(|j| -a[j] * col_g[j]).collect();
    let da = (0..n).map(|j| col_gt[j] - d[j] * col_g[j]).collect();
    LogitGradient { loss, dt, dd, da }
}

pub(crate) fn check_shape(p: &ResponseMatrix, m: usize, n: usize) -> Result<()> {
    if p.dim() != (m, n) {
        return Err(Error::ShapeMismatch {
            expected: (m, n),
            found: p.dim(),
        });
    }
    Ok(())
}

/// Chains `∂H/∂a` through `a = softplus(o) · tanh(b)`.
pub(crate) fn chain_factored(u: &UnconstrainedParams, da: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dh_do = Vec::with_capacity(da.len());
    let mut dh_db = Vec::with_capacity(da.len());
    for ((&o, &b), &g) in u.o.iter().zip(&u.b).zip(da) {
        let tau = b.tanh();
        dh_do.push(g * tau * sigmoid(o));
        dh_db.push(g * softplus(o) * (1.0 - tau * tau));
    }
    (dh_do, dh_db)
}

/// Exact gradient of the configured loss with respect to `(t, d, o, b)`.
pub fn analytic_gradients(
    p: &ResponseMatrix,
    u: &UnconstrainedParams,
    kind: LossKind,
) -> Result<GradientSet> {
    u.check_consistent()?;
    check_shape(p, u.respondents(), u.items())?;
    let a = u.discrimination();
    let lg = logit_gradient(p, &u.t, &u.d, &a, kind);
    let (dh_do, dh_db) = chain_factored(u, &lg.da);
    let grads = GradientSet {
        dh_dt: lg.dt,
        dh_dd: lg.dd,
        dh_do,
        dh_db,
    };
    if let Some(index) = grads.flatten().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            quantity: "gradient",
            index,
        });
    }
    Ok(grads)
}

fn factored_loss(p: &ResponseMatrix, u: &UnconstrainedParams, kind: LossKind) -> f64 {
    loss_from_logits(p, &u.t, &u.d, &u.discrimination(), kind)
}

/// Central differences `(H(x+h) - H(x-h)) / 2h`, one coordinate at a time.
pub fn finite_diff_gradients(
    p: &ResponseMatrix,
    u: &UnconstrainedParams,
    h: f64,
    kind: LossKind,
) -> GradientSet {
    let mut probe = u.clone();
    let mut partials = |select: fn(&mut UnconstrainedParams) -> &mut Vec<f64>| {
        let len = select(&mut probe).len();
        (0..len)
            .map(|k| {
                let x0 = select(&mut probe)[k];
                select(&mut probe)[k] = x0 + h;
                let up = factored_loss(p, &probe, kind);
                select(&mut probe)[k] = x0 - h;
                let down = factored_loss(p, &probe, kind);
                select(&mut probe)[k] = x0;
                (up - down) / (2.0 * h)
            })
            .collect::<Vec<f64>>()
    };
    GradientSet {
        dh_dt: partials(|u| &mut u.t),
        dh_dd: partials(|u| &mut u.d),
        dh_do: partials(|u| &mut u.o),
        dh_db: partials(|u| &mut u.b),
    }
}

/// Largest coordinate-wise relative error between two gradient sets.
///
/// Coordinates whose magnitudes are both below `floor` are compared on an
/// absolute scale against `floor`, so exact zeros do not divide by zero.
pub fn max_relative_error(analytic: &GradientSet, numeric: &GradientSet, floor: f64) -> f64 {
    analytic
        .flatten()
        .iter()
        .zip(numeric.flatten())
        .map(|(&x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::objective::predict_from_logits;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        rng: &mut ChaCha8Rng,
        m: usize,
        n: usize,
    ) -> (ResponseMatrix, UnconstrainedParams) {
        let mut v = |k: usize, lo: f64, hi: f64| {
            (0..k)
                .map(|_| rng.random_range(lo..hi))
                .collect::<Vec<f64>>()
        };
        let u = UnconstrainedParams {
            t: v(m, -2.0, 2.0),
            d: v(n, -2.0, 2.0),
            o: v(n, -1.0, 1.5),
            b: v(n, -1.5, 1.5),
        };
        let cells = v(m * n, 0.05, 0.95);
        let p = ResponseMatrix::new(Array2::from_shape_vec((m, n), cells).unwrap()).unwrap();
        (p, u)
    }

    #[test]
    fn matches_central_differences_on_5x7() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let (p, u) = random_instance(&mut rng, 5, 7);
        for kind in [LossKind::FullCrossEntropy, LossKind::PaperEq6] {
            let a = analytic_gradients(&p, &u, kind).unwrap();
            let f = finite_diff_gradients(&p, &u, 1e-5, kind);
            let err = max_relative_error(&a, &f, 1e-8);
            assert!(err < 1e-5, "{kind:?}: {err}");
        }
    }

    #[test]
    fn vanishes_at_perfect_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, u) = random_instance(&mut rng, 4, 6);
        let p_hat = predict_from_logits(&u.t, &u.d, &u.discrimination());
        let p = ResponseMatrix::new(p_hat.values().clone()).unwrap();
        let g = analytic_gradients(&p, &u, LossKind::FullCrossEntropy).unwrap();
        assert!(g.flatten().iter().all(|x| x.abs() < 1e-8), "{g:?}");
    }

    #[test]
    fn single_cell_ability_gradient_sign() {
        let p = ResponseMatrix::new(Array2::from_elem((1, 1), 0.8)).unwrap();
        // θ = δ = 0.5, ω = 1/tanh(1)·tanh(1) so that a = 1
        let b = 1.0_f64;
        let omega = 1.0 / b.tanh();
        let u = UnconstrainedParams {
            t: vec![0.0],
            d: vec![0.0],
            o: vec![crate::irt::softplus_inv(omega).unwrap()],
            b: vec![b],
        };
        assert!((u.discrimination()[0] - 1.0).abs() < 1e-12);
        let f = finite_diff_gradients(&p, &u, 1e-5, LossKind::FullCrossEntropy);
        let a = analytic_gradients(&p, &u, LossKind::FullCrossEntropy).unwrap();
        assert!(f.dh_dt[0] < 0.0);
        assert!(a.dh_dt[0] < 0.0);
        assert!((a.dh_dt[0] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn central_difference_error_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (p, u) = random_instance(&mut rng, 3, 3);
        let kind = LossKind::FullCrossEntropy;
        let exact = analytic_gradients(&p, &u, kind).unwrap().dh_do[1];
        let err = |h: f64| (finite_diff_gradients(&p, &u, h, kind).dh_do[1] - exact).abs();
        let (e1, e2) = (err(1e-2), err(5e-3));
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn finite_differences_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (p, u) = random_instance(&mut rng, 4, 3);
        let a = finite_diff_gradients(&p, &u, 1e-5, LossKind::PaperEq6);
        let b = finite_diff_gradients(&p, &u, 1e-5, LossKind::PaperEq6);
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, mut u) = random_instance(&mut rng, 3, 3);
        u.t.push(0.0);
        assert!(matches!(
            analytic_gradients(&p, &u, LossKind::FullCrossEntropy),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
