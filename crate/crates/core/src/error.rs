//! Error taxonomy shared across the workspace.
//!
//! Categories map onto process exit codes in the CLI: configuration errors
//! exit with 2, input/data errors with 3, numeric failures with 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: mismatched dimensions, bad hyperparameters,
    /// methods requested without their prerequisites.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed runtime input: labels out of range, shape mismatches
    /// between data arguments.
    #[error("input error: {0}")]
    Input(String),

    /// Missing or malformed external data (files, serialized datasets).
    #[error("data error: {0}")]
    Data(String),

    /// Degenerate data that makes an operation undefined (all-zero
    /// distances, all-zero weights).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Numeric failure: nonfinite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invariant violation inside the library.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Process exit code for the CLI surface.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_) | Error::Data(_) | Error::Degenerate(_) => 3,
            Error::Numeric(_) => 4,
            Error::Internal(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
