use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("value {value} out of range [0,1] in channel {channel} at pixel {pixel}")]
    OutOfRange {
        channel: usize,
        pixel: usize,
        value: f64,
    },

    #[error("unknown sequence preset '{name}' (valid: {valid})")]
    UnknownPreset { name: String, valid: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("incomplete tape: {0}")]
    IncompleteTape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
