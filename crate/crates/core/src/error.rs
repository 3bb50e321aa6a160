use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the tracking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("format error in {path} at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("label capacity exhausted: all {capacity} labels are active")]
    Capacity { capacity: usize },

    #[error("empty memory: the decoder needs at least one historical tracklet")]
    EmptyMemory,

    #[error("temporal order violated: gap {0} must be positive")]
    TemporalOrder(i64),

    #[error("non-finite value in `{name}`")]
    Numeric { name: String },

    #[error("training diverged at step {step}; last good checkpoint: {last_good:?}")]
    Divergence {
        step: u64,
        last_good: Option<PathBuf>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
