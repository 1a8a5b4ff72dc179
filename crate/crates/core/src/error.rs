use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad layer chaining, missing columns, empty grids.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller violated an operation's precondition (shape or length mismatch).
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite value reached a place that requires finite numbers.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A parameter outside its mathematical domain (for instance `tau <= 0`).
    #[error("domain error: {0}")]
    Domain(String),

    /// A metric that is not defined on the given input (missing group or cell).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Input outside what the crate supports (non-binary sensitive attribute).
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
