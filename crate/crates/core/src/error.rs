use std::path::PathBuf;

use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A distribution violates its invariants (negative weights, bad sum, ...).
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// An argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration could not be parsed or validated.
    #[error("invalid config: {0}")]
    Config(String),

    /// A required artifact file is absent.
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    /// An internal solver failed to terminate; indicates a bug, not bad input.
    #[error("solver failure: {0}")]
    Solver(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
