//! Empirical risk minimization for linear regression under the p-th power
//! loss `ℓ_p(t) = |t|^p / (p(p-1))`, with estimators for the constants that
//! govern its excess risk, closed-form bounds, and seeded Monte Carlo
//! campaigns that check those bounds.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod constants;
pub mod dataset;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod loss;
pub mod output;
pub mod par;
pub mod risk;
pub mod rng;
pub mod selftest;
pub mod smallball;
pub mod solver;

pub use bounds::{BoundReport, Theorem};
pub use constants::{estimate_constants, ConstantEstimates, ConstantOptions};
pub use dataset::Dataset;
pub use distributions::{CovariateFamily, DistributionSpec, NoiseFamily, ScalarFamily};
pub use error::{Error, Result};
pub use experiments::{run_experiment, ExperimentConfig, ExperimentKind, ExperimentResult};
pub use loss::LossKernel;
pub use risk::McOptions;
pub use solver::{fit, ErmSolution, SolverOptions};
