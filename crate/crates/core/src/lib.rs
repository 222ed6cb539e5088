//! Predictive variational inference.
//!
//! Fits a variational density `q_phi(theta)` so that the posterior predictive
//! `int p(y | theta) q_phi(theta) dtheta` maximizes a proper scoring rule on
//! observed data, optionally regularized toward the prior or the posterior.
//! Classical VI is available through the same machinery for comparison.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod families;
pub mod models;
pub mod scores;
pub mod gradients;
pub mod regularizers;
pub mod optimizer;
pub mod diagnostics;
pub mod gradcheck;
pub mod experiment;

pub use error::{PviError, Result};
pub use families::{DiagGaussian, Family, FamilyKind, KlEstimate, ParamVector, Segment};
