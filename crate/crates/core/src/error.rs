use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimation stack.
#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside its allowed domain (orientation bounds, negative sigma, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration; `field` names the offending key.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("insufficient signal: |F| = {force_norm:.4} N is below the {floor} N floor")]
    InsufficientSignal { force_norm: f64, floor: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty input: {0}")]
    Empty(String),

    /// The wrench source refused or failed a query.
    #[error("wrench source: {0}")]
    Source(String),

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: impl Into<String>, reason: impl ToString) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.to_string(),
        }
    }
}
