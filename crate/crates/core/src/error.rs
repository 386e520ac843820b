//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by configuration, model evaluation and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A function argument violates its domain (e.g. a non-positive
    /// distance fed to a path-loss law).
    #[error("domain error: {0}")]
    Domain(String),

    /// An index is outside the scenario dimensions (slot, station, ...).
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// The conic solver could not produce a usable answer.
    #[error("solver failure: {0}")]
    Solver(String),

    /// The iterative algorithm had to abort (e.g. repeated numerical
    /// failures in one slot).
    #[error("algorithm aborted: {0}")]
    Aborted(String),

    /// Result-table or file-system trouble in the experiment harness.
    #[error("harness error: {0}")]
    Harness(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
