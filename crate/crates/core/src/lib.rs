//! Beta-IRT item response models for continuous responses in (0, 1).
//!
//! The crate covers the β³ model and its β⁴ variant, in which each
//! discrimination is factored into a magnitude `ω > 0` and a sign-bearing
//! factor `τ ∈ (-1, 1)`. Both are fitted by full-batch gradient descent over
//! unconstrained parameters mapped through link functions. Synthetic data
//! generation, recovery statistics and a Monte Carlo recovery harness sit on
//! top of the model code.

pub mod error;
pub mod fit;
pub mod harness;
pub mod io;
pub mod irt;
pub mod recovery;
pub mod synth;

pub use error::{Error, Result};
pub use fit::{fit, FitConfig, FitResult, LossKind, ModelKind};
pub use irt::{NaturalParams, ResponseMatrix, UnconstrainedParams};
