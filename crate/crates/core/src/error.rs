use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("construction error: {0}")]
    Construction(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("conditional sampling failed: {0}")]
    ConditionalSampling(String),
    #[error("log-density exceeds the rejection hull by {excess:.3e} at {point}")]
    HullViolation { point: f64, excess: f64 },
    #[error("failed to bracket the mode after {0} geometric expansions")]
    Bracket(usize),
    #[error("conditional mode search failed: {0}")]
    Mode(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
