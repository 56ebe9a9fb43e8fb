use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SbrError>;

/// Errors raised across the crate. The CLI maps each variant to an exit code
/// through [`SbrError::kind`].
#[derive(Debug, Error)]
pub enum SbrError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {what} at row {row}, col {col}")]
    NonFinite { what: String, row: usize, col: usize },

    #[error("zero-variance columns in {source_name}: {columns:?}")]
    ZeroVariance {
        source_name: String,
        columns: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cholesky factorization failed at pivot {pivot} (value {value:e})")]
    Factorization { pivot: usize, value: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error class used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        }
    }
}

impl SbrError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            SbrError::Config(_) => ErrorKind::Usage,
            SbrError::Domain(_) | SbrError::Factorization { .. } | SbrError::Numerical(_) => {
                ErrorKind::Numerical
            }
            SbrError::DimensionMismatch { .. }
            | SbrError::NonFinite { .. }
            | SbrError::ZeroVariance { .. }
            | SbrError::Parse { .. }
            | SbrError::Format(_)
            | SbrError::Io { .. } => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SbrError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(what: impl Into<String>, expected: usize, found: usize) -> Self {
        SbrError::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }
}
