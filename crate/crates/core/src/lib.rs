//! Estimation of a bivariate stable subordinator with a Clayton Lévy copula
//! from jumps observed above a small threshold ε.
//!
//! Modules follow the pipeline: [`model`] defines tail integrals, intensities
//! and densities; [`simulate`] draws jump paths; [`observation`] truncates
//! them at ε; [`estimate`] fits the two-step IFM and likelihood estimators;
//! [`godambe`] computes the asymptotic covariance; [`study`] runs Monte Carlo
//! comparisons.
// `!(x > 0.0)` rejects NaN on purpose; small matrices read best with indices
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod estimate;
pub mod exec;
pub mod godambe;
pub mod model;
pub mod observation;
pub mod optim;
pub mod quadrature;
pub mod simulate;
pub mod study;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{Component, ModelParams, TruncationConfig};
pub use observation::{truncate, TruncatedDataset};
pub use simulate::{simulate_path, JumpStream, SimulationConfig};
