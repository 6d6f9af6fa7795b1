use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad magic, unparseable header or unsupported layout.
    #[error("format error: {0}")]
    Format(String),

    /// Payload length disagrees with the header.
    #[error("corrupt capture: {0}")]
    Corruption(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("insufficient peaks: {0}")]
    InsufficientPeaks(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    /// True for failures of the estimation stage rather than of input handling.
    pub fn is_estimation(&self) -> bool {
        matches!(self, Error::InsufficientPeaks(_) | Error::Estimation(_))
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
