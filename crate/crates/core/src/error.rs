use thiserror::Error;

/// Errors raised by the agent's numerical kernels and plumbing.
#[derive(Debug, Error)]
pub enum TgmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid Wishart parameters: {0}")]
    InvalidWishart(String),

    #[error("invalid Dirichlet concentration at index {index}: {value}")]
    InvalidDirichlet { index: usize, value: f64 },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("maze parse error: {0}")]
    MazeParse(String),

    #[error("episode already finished")]
    EpisodeDone,

    #[error("inconsistent forget plan: {0}")]
    InconsistentPlan(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TgmError>;
