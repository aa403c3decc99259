use thiserror::Error;

#[derive(Debug, Error)]
pub enum KanError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("numerical overflow in layer {layer}, node {node}: |value| = {magnitude:e}")]
    Overflow {
        layer: usize,
        node: usize,
        magnitude: f64,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = KanError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> KanError {
    KanError::InvalidInput(msg.into())
}
