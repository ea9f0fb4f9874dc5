use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("distribution not normalized: {0}")]
    Normalization(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("empty preimage for state {0}")]
    EmptyPreimage(String),

    #[error("maps are incomparable: {0}")]
    Incomparable(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
