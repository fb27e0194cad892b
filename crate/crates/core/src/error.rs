use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// The prefix already ends with the end-of-sequence token; there is no
    /// next token to predict.
    #[error("sequence already complete (prefix ends with EOS)")]
    CompletedSequence,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// A target with no predicted symbols (SOS immediately followed by nothing).
    #[error("target has no predicted symbols")]
    EmptyTarget,

    /// A next-token distribution that fails normalization.
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("prompt pool is empty")]
    EmptyPool,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Structural problems in model definition files or checkpoints.
    #[error("invalid model definition: {0}")]
    InvalidModel(String),

    /// Inputs that violate an operation's contract (e.g. a prefix that does
    /// not start with SOS).
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
