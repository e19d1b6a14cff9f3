use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("index {index} out of range ({len} {what})")]
    Index {
        index: usize,
        len: usize,
        what: &'static str,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("graph validation failed: {0}")]
    Validation(String),
    #[error("non-finite values in {0}")]
    Numeric(String),
    #[error("adaptation failed: {0}")]
    Adaptation(String),
    #[error("training diverged: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint carries no source statistics")]
    MissingStats,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("undefined quantity: {0}")]
    Undefined(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by non-finite arithmetic rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::Adaptation(_) | Error::Training(_)
        )
    }

    /// True for failures caused by invalid user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
