//! Link functions between unconstrained optimizer variables and bounded
//! model parameters, with their inverses.
//!
//! | parameter | range     | forward    | inverse        |
//! |-----------|-----------|------------|----------------|
//! | θ, δ      | (0, 1)    | `sigmoid`  | `logit`        |
//! | ω         | (0, ∞)    | `softplus` | `softplus_inv` |
//! | τ         | (-1, 1)   | `tanh`     | `artanh`       |

use crate::error::{Error, Result};

/// Logistic function `1 / (1 + e^-x)`.
///
/// Evaluated on the branch that never exponentiates a positive number, so it
/// saturates smoothly instead of overflowing.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`], `ln(p / (1 - p))`.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            function: "logit",
            value: p,
            domain: "(0, 1)",
        });
    }
    Ok(logit_unchecked(p))
}

#[inline]
pub(crate) fn logit_unchecked(p: f64) -> f64 {
    // ln(p) - ln1p(-p) keeps precision near both ends
    p.ln() - (-p).ln_1p()
}

/// `ln(1 + e^x)`; returns `x + ln(1 + e^-x)` for positive `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`], `ln(e^y - 1)`.
pub fn softplus_inv(y: f64) -> Result<f64> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::Domain {
            function: "softplus_inv",
            value: y,
            domain: "(0, inf)",
        });
    }
    // y + ln(1 - e^-y) avoids e^y overflow; exp_m1 covers small y
    Ok(if y > 1.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    })
}

#[inline]
pub fn tanh_link(x: f64) -> f64 {
    x.tanh()
}

/// Inverse hyperbolic tangent on the open interval (-1, 1).
pub fn artanh(y: f64) -> Result<f64> {
    if !(y > -1.0 && y < 1.0) {
        return Err(Error::Domain {
            function: "artanh",
            value: y,
            domain: "(-1, 1)",
        });
    }
    Ok(y.atanh())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN3: f64 = 1.098_612_288_668_109_8;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        let s = sigmoid(40.0);
        assert!(s > 1.0 - 1e-15 && s <= 1.0);
        assert!((sigmoid(LN3) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0).is_finite());
    }

    #[test]
    fn logit_values() {
        assert_eq!(logit(0.5).unwrap(), 0.0);
        assert!((logit(0.75).unwrap() - LN3).abs() < 1e-14);
        assert!((logit(sigmoid(2.7)).unwrap() - 2.7).abs() < 1e-12);
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(logit(bad), Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let o = softplus_inv(1.0).unwrap();
        assert!((o - (std::f64::consts::E - 1.0).ln()).abs() < 1e-15);
        assert!((o - 0.541_324_854_612_918_1).abs() < 1e-12);
        assert!((softplus(softplus_inv(3.2).unwrap()) - 3.2).abs() < 1e-10);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        assert!(softplus(-1000.0) >= 0.0);
        assert!(softplus_inv(0.0).is_err());
        assert!(softplus_inv(-2.0).is_err());
    }

    #[test]
    fn tanh_values() {
        assert_eq!(tanh_link(0.0), 0.0);
        assert!((artanh(0.5).unwrap() - 0.5 * LN3).abs() < 1e-15);
        assert!((artanh(0.5).unwrap() - 0.549_306_144_334_054_9).abs() < 1e-12);
        for x in [-2.0, -0.1, 0.1, 2.0_f64] {
            assert_eq!(tanh_link(x).signum(), x.signum());
        }
        assert!(artanh(1.0).is_err());
        assert!(artanh(-1.0).is_err());
        assert!((tanh_link(artanh(-0.3).unwrap()) + 0.3).abs() < 1e-10);
    }

    #[test]
    fn softplus_inverse_roundtrip_over_range() {
        for k in -200..=200 {
            let y = 10f64.powf(k as f64 / 40.0);
            let back = softplus(softplus_inv(y).unwrap());
            assert!((back - y).abs() <= 1e-10 * y.max(1.0), "y={y} back={back}");
        }
    }
}
