use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("dense conversion refused: {0}")]
    CapExceeded(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("degenerate global phase: |tr U| = {trace_abs:e} is below {threshold:e}")]
    DegeneratePhase { trace_abs: f64, threshold: f64 },
    #[error("incomplete dataset, missing settings: {}", .0.join(", "))]
    IncompleteDataset(Vec<String>),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}
