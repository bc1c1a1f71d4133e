use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("transition row for state {state} under aid `{aid}` has no mass")]
    ZeroRow { aid: String, state: String },

    #[error("segment coverage has a gap or overlap at {at:.6} s")]
    Coverage { at: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("gram matrix is not positive definite even with jitter {jitter:e}; inputs are too close or lengthscales too long")]
    Conditioning { jitter: f64 },

    #[error("baseline calibration failed: {0}")]
    Calibration(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
