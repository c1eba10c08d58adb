//! Link functions, the Beta-IRT item characteristic curve and the parameter
//! containers shared by the rest of the crate.

mod icc;
mod link;
mod params;

pub use icc::{beta_shape_params, icc_expected, icc_from_logits, EXPONENT_CAP};
pub(crate) use link::logit_unchecked;
pub use link::{artanh, logit, sigmoid, softplus, softplus_inv, tanh_link};
pub use params::{
    clamp_tau, NaturalParams, ResponseMatrix, UnconstrainedParams, RESPONSE_EPS, TAU_MAX,
};
