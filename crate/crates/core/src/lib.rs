//! Nuclear-norm minimization by fixed-point continuation.
//!
//! Solves `min ‖X‖_*  s.t.  A(X) = b` through the regularized problem
//! `min μ‖X‖_* + ½‖A(X) − b‖²` with a decreasing `μ` schedule. Matrix
//! completion is the special case where `A` samples entries.
//!
//! - [`linalg`]: dense matrices, exact SVD, shrinkage operators
//! - [`operators`]: the measurement map, adjoint and gradient
//! - [`approx_svd`]: Monte Carlo column-sampling SVD and rank adaptation
//! - [`solvers`]: continuation, debiasing, Bregman iterations, presets
//! - [`problems`]: random instances, metrics, benchmark tables
//! - [`cli`]: file formats and the command-line front end

pub mod approx_svd;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod operators;
pub mod problems;
pub mod solvers;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SvdFactors};
pub use operators::{EntryMask, ExplicitAffine, MeasurementMap, MeasurementVector};
pub use solvers::{Profile, SolveReport, SolverConfig, SvdMode};
