use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid source: {0}")]
    InvalidSource(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid object: {0}")]
    InvalidObject(String),

    #[error("propagation distance must be non-zero")]
    ZeroDistance,

    #[error("index {index} out of range for grid of {n} samples")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("at least {required} realizations are required, got {got}")]
    InsufficientRealizations { required: u64, got: u64 },

    #[error("no grid sample within half a spacing of x = {target:e} m")]
    NoSampleNear { target: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed data file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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
}
