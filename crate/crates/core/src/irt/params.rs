use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::link::{artanh, logit, sigmoid, softplus, softplus_inv, tanh_link};
use crate::error::{Error, Result};

/// Observed responses are clamped into `[RESPONSE_EPS, 1 - RESPONSE_EPS]`.
pub const RESPONSE_EPS: f64 = 1e-6;

/// Largest admissible `|τ|` before applying `artanh`.
pub const TAU_MAX: f64 = 1.0 - 1e-6;

/// Dense respondents × items grid of responses in (0, 1).
///
/// Rows are respondents (`M`), columns are items (`N`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    values: Array2<f64>,
}

impl ResponseMatrix {
    /// Validates shape and finiteness, then clamps every cell into
    /// `[RESPONSE_EPS, 1 - RESPONSE_EPS]`.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (m, n) = values.dim();
        if m == 0 || n == 0 {
            return Err(Error::InvalidMatrix(format!(
                "need at least one respondent and one item, got {m}x{n}"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "response",
                index: pos,
            });
        }
        // Exact 0 and 1 are legitimate proportions; anything beyond is not.
        if let Some((pos, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidMatrix(format!(
                "response {v} at flat index {pos} is outside [0, 1]"
            )));
        }
        let values = values.mapv(|v| v.clamp(RESPONSE_EPS, 1.0 - RESPONSE_EPS));
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidMatrix(format!(
                "row {bad} has {} columns, expected {n}",
                rows[bad].len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((rows.len(), n), flat)
            .map_err(|e| Error::InvalidMatrix(e.to_string()))?;
        Self::new(arr)
    }

    /// Model predictions; stored as computed, without response clamping.
    pub(crate) fn from_predictions(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn respondents(&self) -> usize {
        self.values.nrows()
    }

    pub fn items(&self) -> usize {
        self.values.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn mean(&self) -> f64 {
        self.values.sum() / self.values.len() as f64
    }

    pub(crate) fn check_same_shape(&self, other: &ResponseMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

/// Raw optimizer state. Every entry lives on the whole real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedParams {
    /// Ability logits, one per respondent.
    pub t: Vec<f64>,
    /// Difficulty logits, one per item.
    pub d: Vec<f64>,
    /// Pre-softplus discrimination magnitudes.
    pub o: Vec<f64>,
    /// Pre-tanh discrimination signs.
    pub b: Vec<f64>,
}

impl UnconstrainedParams {
    pub fn respondents(&self) -> usize {
        self.t.len()
    }

    pub fn items(&self) -> usize {
        self.d.len()
    }

    pub(crate) fn check_consistent(&self) -> Result<()> {
        let n = self.d.len();
        if self.o.len() != n || self.b.len() != n {
            return Err(Error::InvalidConfig(format!(
                "item vectors disagree in length: d={}, o={}, b={}",
                n,
                self.o.len(),
                self.b.len()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        [&self.t, &self.d, &self.o, &self.b]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Discriminations `a_j = softplus(o_j) * tanh(b_j)`.
    pub fn discrimination(&self) -> Vec<f64> {
        self.o
            .iter()
            .zip(&self.b)
            .map(|(&o, &b)| softplus(o) * tanh_link(b))
            .collect()
    }

    pub fn to_natural(&self) -> NaturalParams {
        NaturalParams {
            theta: self.t.iter().map(|&x| sigmoid(x)).collect(),
            delta: self.d.iter().map(|&x| sigmoid(x)).collect(),
            omega: self.o.iter().map(|&x| softplus(x)).collect(),
            tau: self.b.iter().map(|&x| tanh_link(x)).collect(),
        }
    }
}

/// Model-space parameters of the four-parameter model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalParams {
    /// Abilities θ in (0, 1).
    pub theta: Vec<f64>,
    /// Difficulties δ in (0, 1).
    pub delta: Vec<f64>,
    /// Discrimination magnitudes ω > 0.
    pub omega: Vec<f64>,
    /// Discrimination signs τ in (-1, 1).
    pub tau: Vec<f64>,
}

impl NaturalParams {
    /// Discriminations `a_j = ω_j τ_j`.
    pub fn discrimination(&self) -> Vec<f64> {
        self.omega
            .iter()
            .zip(&self.tau)
            .map(|(w, t)| w * t)
            .collect()
    }

    /// Checks the open-interval invariants of every component.
    pub fn validate(&self) -> Result<()> {
        let n = self.delta.len();
        if self.omega.len() != n || self.tau.len() != n {
            return Err(Error::InvalidConfig(
                "item vectors disagree in length".into(),
            ));
        }
        type Check<'a> = (&'static str, &'a Vec<f64>, fn(f64) -> bool, &'static str);
        let checks: [Check; 4] = [
            ("theta", &self.theta, |x| x > 0.0 && x < 1.0, "(0, 1)"),
            ("delta", &self.delta, |x| x > 0.0 && x < 1.0, "(0, 1)"),
            (
                "omega",
                &self.omega,
                |x| x > 0.0 && x.is_finite(),
                "(0, inf)",
            ),
            ("tau", &self.tau, |x| x > -1.0 && x < 1.0, "(-1, 1)"),
        ];
        for (name, values, ok, domain) in checks {
            if let Some(&v) = values.iter().find(|&&v| !ok(v)) {
                return Err(Error::Domain {
                    function: name,
                    value: v,
                    domain,
                });
            }
        }
        Ok(())
    }

    /// Maps back to optimizer space. `|τ|` above [`TAU_MAX`] is rejected;
    /// use [`clamp_tau`] first when the value may sit on the boundary.
    pub fn from_natural(&self) -> Result<UnconstrainedParams> {
        self.validate()?;
        if let Some(&v) = self.tau.iter().find(|t| t.abs() > TAU_MAX) {
            return Err(Error::Domain {
                function: "from_natural",
                value: v,
                domain: "|tau| <= 1 - 1e-6",
            });
        }
        let map = |v: &[f64], f: fn(f64) -> Result<f64>| {
            v.iter().map(|&x| f(x)).collect::<Result<Vec<f64>>>()
        };
        Ok(UnconstrainedParams {
            t: map(&self.theta, logit)?,
            d: map(&self.delta, logit)?,
            o: map(&self.omega, softplus_inv)?,
            b: map(&self.tau, artanh)?,
        })
    }
}

/// Clamps `τ` into `[-TAU_MAX, TAU_MAX]`.
pub fn clamp_tau(tau: f64) -> f64 {
    tau.clamp(-TAU_MAX, TAU_MAX)
}
