//! Library surface of the experiment runner: config parsing/validation and
//! experiment dispatch, kept out of main.rs so integration tests and fuzz
//! targets can drive them directly.

pub mod config;
pub mod runner;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 5.
    #[error("config file not found: {0}")]
    MissingFile(String),
    /// Exit 6.
    #[error("malformed config: {0}")]
    Malformed(String),
    /// Exit 2. Carries every violation found, not just the first.
    #[error("invalid config:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    /// Exit 3.
    #[error("numerical abort: {0}")]
    Numerical(String),
    /// Exit 4.
    #[error("check failed: {0}")]
    CheckFailed(String),
    /// Exit 1.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::CheckFailed(_) => 4,
            CliError::MissingFile(_) => 5,
            CliError::Malformed(_) => 6,
        }
    }
}

pub use config::{parse_config, parse_config_str, validate, ConfigFile, ExperimentKind, Validated};
pub use runner::{run_experiment, RunOutcome};
