use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stack format error: {0}")]
    Format(String),

    #[error("truncated stack: header declares {expected} bytes, file has {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("CFL violation: dt = {dt:.4e} s exceeds stability limit {limit:.4e} s")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-finite wave state at t = {t:.4e} s (step {step})")]
    NonFinite { t: f64, step: usize },

    #[error("push calibration failed: simulated response is zero")]
    Calibration,

    #[error("tracking failed at frame {frame}: {message}")]
    Tracking { frame: usize, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
