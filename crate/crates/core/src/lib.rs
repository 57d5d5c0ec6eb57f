//! Kronecker-product covariance estimation by quadratic form.
//!
//! The library estimates covariance matrices of the form
//! `sigma^2 * S_1 (x) ... (x) S_v` (each factor trace-normalized to its
//! dimension) from the rotated partial traces of the sample covariance
//! matrix, provides LM and Wald mean-vector tests with `N(0,1)`
//! standardization, a Ledoit-Wolf linear shrinkage baseline, and a
//! reproducible Monte Carlo harness with MSE / PRIAL / size / power
//! reporting.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod simulation;
pub mod tensorlin;

pub use error::{Error, Result};
