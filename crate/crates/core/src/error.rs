use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty-support: scenario list is empty")]
    EmptySupport,

    #[error("state-out-of-bounds: coordinate {coord} = {value} outside [{lower}, {upper}]")]
    StateOutOfBounds {
        coord: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("non-convergence after {iterations} iterations (last delta {last_delta:e})")]
    NonConvergence { iterations: usize, last_delta: f64 },

    #[error("numeric-blowup: non-finite state {0:?}")]
    NumericBlowup(Vec<f64>),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("nan-gradient: non-finite gradient entry at parameter {0}")]
    NanGradient(usize),

    #[error("singular-design: normal equations are singular (retry with ridge > 0)")]
    SingularDesign,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path} line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
