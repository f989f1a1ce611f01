use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("condition id {condition} out of range (n_conditions = {n_conditions})")]
    BadCondition {
        condition: usize,
        n_conditions: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("time {t} outside the valid range (limit {limit})")]
    TimeOutOfRange { t: f64, limit: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
