use std::fmt;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("row {row} has L2 norm below {eps:e}")]
    DegenerateRow { row: usize, eps: f64 },
    #[error("spot {spot} has zero total count")]
    DegenerateSpot { spot: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("{0}")]
    Ingestion(IngestionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Ingestion failure with file and line context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestionError {
    pub source: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for IngestionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.source, line, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl Error {
    pub(crate) fn ingestion(source: &str, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Ingestion(IngestionError {
            source: source.to_string(),
            line,
            message: message.into(),
        })
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::Parameter(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
