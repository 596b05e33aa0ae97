//! Single-epoch GNSS positioning with learned per-satellite weights.
//!
//! A recurrent network reads, for every measurement of an epoch, a summary of
//! the leave-one-out pseudorange residuals together with per-link signal
//! features, and predicts a per-link error scale. The scales become weights in
//! a conventional weighted least-squares solver. Parametric weighting and a
//! residual-test fault exclusion scheme are provided as baselines, along with a
//! synthetic campaign generator and an evaluation harness.

pub mod baselines;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod geo;
pub mod io;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod residuals;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
