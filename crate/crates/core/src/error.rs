use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CrnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CrnError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("dates out of order: {previous} is followed by {next}")]
    Ordering { previous: String, next: String },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("dataset too small: {0}")]
    TooSmall(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("evidence has zero probability under the model")]
    ZeroProbability,

    #[error("state space of {0} joint states exceeds the enumeration limit")]
    OracleLimit(u128),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CrnError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CrnError::Io {
            path: path.into(),
            source,
        }
    }
}
