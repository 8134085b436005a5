use thiserror::Error;

use crate::solver::ErmSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("exponent p must satisfy p > 1, got {0}")]
    InvalidExponent(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("second derivative of the loss is unbounded at t = {t} for p = {p} < 2")]
    Singularity { p: f64, t: f64 },

    #[error("invalid distribution spec: {0}")]
    InvalidSpec(String),

    #[error("moment hypothesis violated: {0}")]
    MomentViolation(String),

    #[error("solver hit the iteration limit ({}) with gradient norm {:.3e}", .best.iterations, .best.grad_norm)]
    MaxIterations { best: Box<ErmSolution> },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("matrix is not safely positive definite: {0}")]
    NonPositiveDefinite(String),

    #[error("Monte Carlo estimate {estimate:.6e} is below -3 standard errors ({std_err:.3e})")]
    EstimatorInconsistency { estimate: f64, std_err: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by floating point behaviour rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::MaxIterations { .. }
                | Error::NumericalBreakdown(_)
                | Error::NonPositiveDefinite(_)
                | Error::Singularity { .. }
                | Error::EstimatorInconsistency { .. }
        )
    }
}
