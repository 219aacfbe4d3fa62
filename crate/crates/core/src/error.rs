use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("incompatible hashes: {left} vs {right}")]
    IncompatibleHash { left: String, right: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0} is undefined: zero denominator")]
    UndefinedRate(&'static str),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("capture error: {0}")]
    Capture(String),

    #[error("insufficient calibration: {accepted} accepted capture(s), need at least 2")]
    InsufficientCalibration { accepted: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame index misalignment at frame {0}")]
    Misaligned(u64),

    #[error("no calibration threshold available; run calibrate-threshold first")]
    MissingThreshold,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
