use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A function was called outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An invalid parameter value (filter window, keep probability, ...).
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A malformed input line or field.
    #[error("parse error in field `{field}`: {msg}")]
    Parse { field: &'static str, msg: String },

    /// Tensor shapes do not agree.
    #[error("shape mismatch: {left:?} vs {right:?} ({op})")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A distance or class label outside the binning range.
    #[error("label error: {0}")]
    Label(String),

    /// NaN/Inf or another numeric failure during computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// A file exists but its contents are not what we expect.
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Param(_) => 2,
            Error::Io { .. } | Error::Format { .. } | Error::Parse { .. } => 3,
            Error::Domain(_) | Error::Shape { .. } | Error::Label(_) | Error::Numeric(_) => 4,
        }
    }
}
