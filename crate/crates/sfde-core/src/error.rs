use thiserror::Error;

/// Errors produced by construction, validation, and simulation.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation requires a modal basis (bounded domain); {0}")]
    NoBasis(String),

    #[error("model validation failed: {0}")]
    InvalidModel(String),

    #[error("smallness condition violated: {0}")]
    SmallnessViolated(String),

    #[error("numerical abort at t = {time}: {reason}")]
    NumericalAbort { time: f64, reason: String },

    #[error("fixed-point iteration failed: {0}")]
    SolverFailure(String),

    #[error("mismatched inputs: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
