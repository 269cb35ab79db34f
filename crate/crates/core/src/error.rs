use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate orientation: forward axis is vertical")]
    DegenerateOrientation,

    #[error("numeric degeneracy: innovation covariance condition number {condition:e}")]
    NumericDegeneracy { condition: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
