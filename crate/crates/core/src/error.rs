use thiserror::Error;

/// Errors raised by the spectral primitives, optimizer steps and harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} outside [{min}, {max}]")]
    Range {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("validation failed: {0}")]
    Validation(String),

    /// σ_r is numerically zero; `numerical_rank` tells the caller how far to lower r.
    #[error("rank {requested} is degenerate (numerical rank {numerical_rank})")]
    DegenerateRank {
        requested: usize,
        numerical_rank: usize,
    },

    /// Invalid configuration; `field` is a dotted path into the config document.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("numerical blow-up at step {step}: {reason}")]
    NumericalAbort { step: usize, reason: String },

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn range(what: &'static str, value: usize, min: usize, max: usize) -> Self {
        Error::Range {
            what,
            value,
            min,
            max,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
