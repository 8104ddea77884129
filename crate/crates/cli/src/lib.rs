//! Experiment runner: one command per experiment, each with a JSON config, a
//! run directory holding a manifest, a metrics CSV and artifacts, and a
//! machine-readable report.

pub mod commands;
pub mod config;
pub mod output;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] condot::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("checks failed: {0}")]
    ChecksFailed(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Process exit code for an error: 2 for invalid input, 1 for numerical
/// failures and failed checks.
pub fn exit_code(err: &CliError) -> u8 {
    use condot::Error as E;
    match err {
        CliError::Validation(_) | CliError::Json(_) => 2,
        CliError::Core(
            E::InvalidConfig(_)
            | E::InvalidMeasure(_)
            | E::DimensionMismatch { .. }
            | E::AmbiguousGrouping { .. }
            | E::MarginalMismatch
            | E::UnsupportedExponent(_)
            | E::BatchTooLarge { .. }
            | E::Checkpoint(_)
            | E::Json(_),
        ) => 2,
        _ => 1,
    }
}
