//! Weak-instrument robust likelihood-ratio testing for linear IV regression.
//!
//! The test statistic is the likelihood ratio with estimated reduced-form
//! error covariance, `LR1/(n-k)`, and critical values are Monte-Carlo
//! quantiles of its exact conditional null law given the (estimated)
//! standardized first-stage statistic. The conditional law is simulated
//! from four building blocks: a k-variate standard normal reduced to its
//! component along the conditioning direction plus an independent
//! chi-square, and an identity-scale Wishart block for the residual Gram
//! matrix. The conventional plug-in CLR comparator, a known-variance oracle
//! test, and a simulation harness (size tables, calibrated power curves,
//! critical-value tabulation) are included, along with a CSV/SVG command
//! line front end.

pub mod cli;
pub mod conditional;
pub mod error;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod simulation;
pub mod statistics;

pub use error::{Error, Result};
