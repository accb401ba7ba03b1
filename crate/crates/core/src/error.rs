use std::path::PathBuf;

use thiserror::Error;

use crate::bridge::BridgeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("operator is not linear: relative deviation {deviation:e}")]
    NotLinear { deviation: f64 },

    #[error("{0}")]
    Config(String),

    #[error("trace contains no PSNR values")]
    NoPsnr,

    #[error(transparent)]
    Bridge(#[from] BridgeError),

    #[error("compare member {index} ({label}): {source}")]
    Member {
        index: usize,
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Process exit codes used by the command line tool.
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

impl Error {
    /// `2` for configuration problems, `3` for file, codec and bridge
    /// failures, `1` for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidParameter { .. }
            | Error::Parse { .. }
            | Error::DimensionMismatch { .. }
            | Error::NoPsnr => EXIT_CONFIG,
            Error::Io { .. } | Error::Codec(_) | Error::UnsupportedFormat(_) | Error::Bridge(_) => EXIT_IO,
            Error::NotConverged { .. } | Error::NotLinear { .. } => EXIT_FAILURE,
            Error::Member { source, .. } => source.exit_code(),
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
