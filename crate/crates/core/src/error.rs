use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("sample rate mismatch: expected {expected} Hz, got {got} Hz; resample the input first")]
    SampleRateMismatch { expected: u32, got: u32 },

    #[error("non-positive frequency {0} Hz")]
    NonPositiveFrequency(f64),

    #[error("non-finite gradient or loss at step {step}")]
    NonFinite { step: u64 },

    #[error("misaligned sidecar {path}: expected {expected} frames, got {got}")]
    MisalignedSidecar {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error("empty corpus: no readable audio in {0}")]
    EmptyCorpus(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn shape(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }
}
