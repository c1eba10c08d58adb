//! Starting points for the optimizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::irt::{
    artanh, logit_unchecked, softplus_inv, ResponseMatrix, UnconstrainedParams, TAU_MAX,
};
use crate::recovery::pearson;

/// Smallest `|τ|` a prior may take; also the value used when the
/// ability/response correlation is undefined.
pub const TAU_FLOOR: f64 = 0.05;

/// `o` such that `softplus(o) = 1`, i.e. `ln(e - 1)`.
pub fn unit_magnitude() -> f64 {
    softplus_inv(1.0).expect("1 is in the softplus range")
}

/// Sign-preserving clamp of a correlation into `[TAU_FLOOR, TAU_MAX]`;
/// `None` or an exact zero map to `+TAU_FLOOR`.
pub fn sign_prior(correlation: Option<f64>) -> f64 {
    match correlation {
        Some(r) if r != 0.0 && r.is_finite() => r.signum() * r.abs().clamp(TAU_FLOOR, TAU_MAX),
        _ => TAU_FLOOR,
    }
}

/// Data-driven starting point:
///
/// * `θ_i` = mean response of respondent `i`,
/// * `δ_j` = 1 − mean response to item `j`,
/// * `ω_j` = 1,
/// * `τ_j` = Pearson correlation between the initial abilities and the
///   responses to item `j`, clamped by [`sign_prior`].
pub fn init_with_priors(p: &ResponseMatrix) -> UnconstrainedParams {
    let values = p.values();
    let theta0: Vec<f64> = values
        .outer_iter()
        .map(|row| row.sum() / row.len() as f64)
        .collect();
    let mut d = Vec::with_capacity(p.items());
    let mut b = Vec::with_capacity(p.items());
    for column in values.columns() {
        let mean = column.sum() / column.len() as f64;
        // means of clamped responses stay inside the open interval
        d.push(logit_unchecked(1.0 - mean));
        let responses: Vec<f64> = column.to_vec();
        let tau = sign_prior(pearson(&theta0, &responses).ok());
        b.push(artanh(tau).expect("clamped prior is inside (-1, 1)"));
    }
    UnconstrainedParams {
        t: theta0.iter().map(|&x| logit_unchecked(x)).collect(),
        d,
        o: vec![unit_magnitude(); p.items()],
        b,
    }
}

/// Draws `(t, d)` i.i.d. standard normal, `t` first, from a generator seeded
/// with `seed`.
pub(crate) fn random_logits(respondents: usize, items: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = (0..respondents)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let d = (0..items)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    (t, d)
}

/// Uninformed starting point: standard-normal `t` and `d`, `ω = 1` and
/// `τ = TAU_FLOOR` for every item.
pub fn init_without_priors(respondents: usize, items: usize, seed: u64) -> UnconstrainedParams {
    let (t, d) = random_logits(respondents, items, seed);
    UnconstrainedParams {
        t,
        d,
        o: vec![unit_magnitude(); items],
        b: vec![artanh(TAU_FLOOR).expect("floor is inside (-1, 1)"); items],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irt::softplus;
    use ndarray::{array, Array2};

    #[test]
    fn uniform_matrix_uses_fallbacks() {
        let p = ResponseMatrix::new(Array2::from_elem((3, 4), 0.5)).unwrap();
        let u = init_with_priors(&p);
        assert!(u.t.iter().all(|&x| x == 0.0));
        assert!(u.d.iter().all(|&x| x == 0.0));
        assert!(u.b.iter().all(|&b| (b.tanh() - TAU_FLOOR).abs() < 1e-15));
        assert!(u.o.iter().all(|&o| (softplus(o) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ability_prior_is_row_mean_logit() {
        let p = ResponseMatrix::new(array![[0.9, 0.9], [0.1, 0.1]]).unwrap();
        let u = init_with_priors(&p);
        assert!((u.t[0] - 2.197_224_577_336_219_6).abs() < 1e-12);
        assert!((u.t[1] + 2.197_224_577_336_219_6).abs() < 1e-12);
    }

    #[test]
    fn sign_prior_follows_correlation() {
        let p = ResponseMatrix::new(array![
            [0.9, 0.2, 0.9, 0.5],
            [0.6, 0.5, 0.5, 0.5],
            [0.2, 0.9, 0.1, 0.5]
        ])
        .unwrap();
        let u = init_with_priors(&p);
        // row means fall down the rows: item 0 rises with ability, item 1 falls
        assert!(u.b[0] > 0.0);
        assert!(u.b[1] < 0.0);
        assert!((u.b[3].tanh() - TAU_FLOOR).abs() < 1e-15);
        // difficulty prior is one minus the item mean
        assert!((crate::irt::sigmoid(u.d[0]) - (1.0 - 1.7 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn sign_prior_clamps() {
        assert_eq!(sign_prior(None), TAU_FLOOR);
        assert_eq!(sign_prior(Some(0.0)), TAU_FLOOR);
        assert_eq!(sign_prior(Some(-0.01)), -TAU_FLOOR);
        assert_eq!(sign_prior(Some(1.0)), TAU_MAX);
        assert_eq!(sign_prior(Some(-1.0)), -TAU_MAX);
        assert_eq!(sign_prior(Some(0.4)), 0.4);
    }

    #[test]
    fn random_init_is_seeded() {
        let a = init_without_priors(5, 4, 9);
        assert_eq!(a, init_without_priors(5, 4, 9));
        assert_ne!(a.t, init_without_priors(5, 4, 10).t);
        assert!(a.o.iter().all(|&o| (softplus(o) - 1.0).abs() < 1e-10));
    }
}
