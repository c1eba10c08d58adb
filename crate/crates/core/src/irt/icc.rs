//! Item characteristic curve and Beta shape parameters.
//!
//! Both are evaluated in logit / log space. The power form
//! `1 / (1 + (δ/(1-δ))^a (θ/(1-θ))^-a)` is algebraically identical to
//! `sigmoid(a (logit θ - logit δ))`, which never forms the large powers.

use super::link::{logit_unchecked, sigmoid};

/// Exponents are clamped to `±EXPONENT_CAP` before `exp`.
pub const EXPONENT_CAP: f64 = 500.0;

#[inline]
fn cap(x: f64) -> f64 {
    x.clamp(-EXPONENT_CAP, EXPONENT_CAP)
}

/// Expected response of a respondent with ability `theta` on an item with
/// difficulty `delta` and discrimination `a`.
#[inline]
pub fn icc_expected(theta: f64, delta: f64, a: f64) -> f64 {
    debug_assert!(theta > 0.0 && theta < 1.0, "theta={theta}");
    debug_assert!(delta > 0.0 && delta < 1.0, "delta={delta}");
    icc_from_logits(logit_unchecked(theta), logit_unchecked(delta), a)
}

/// Same curve with ability and difficulty already on the logit scale.
#[inline]
pub fn icc_from_logits(t: f64, d: f64, a: f64) -> f64 {
    sigmoid(cap(a * (t - d)))
}

/// Shape parameters `(α, β)` of the Beta distribution of a response:
/// `α = (θ/δ)^a`, `β = ((1-θ)/(1-δ))^a`.
pub fn beta_shape_params(theta: f64, delta: f64, a: f64) -> (f64, f64) {
    debug_assert!(theta > 0.0 && theta < 1.0, "theta={theta}");
    debug_assert!(delta > 0.0 && delta < 1.0, "delta={delta}");
    let log_alpha = a * (theta.ln() - delta.ln());
    let log_beta = a * ((-theta).ln_1p() - (-delta).ln_1p());
    (cap(log_alpha).exp(), cap(log_beta).exp())
}
