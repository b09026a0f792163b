use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrmError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A value lies outside the domain the model assumes (propensity of zero,
    /// reward above one, non-finite feature, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("non-finite objective at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl CrmError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        CrmError::Argument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        CrmError::Domain(msg.into())
    }

    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        CrmError::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CrmError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, CrmError::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, CrmError>;
