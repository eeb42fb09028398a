use thiserror::Error;

pub type Result<T> = std::result::Result<T, BridgeError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    /// A state entry became NaN or infinite while integrating.
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    /// `M†(t)` could not be inverted even after jitter escalation.
    #[error("M† is singular at node {node} (min pivot {pivot:e})")]
    SingularMdag { node: usize, pivot: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("all {paths} paths in the batch diverged")]
    NoSurvivors { paths: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("histogram bin edges differ")]
    BinMismatch,
}
