use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("trade rejected: l1 norm {norm} exceeds the unit cap")]
    TradeRejected { norm: f64 },

    #[error("market closed: all {horizon} arrivals have been used")]
    MarketClosed { horizon: u64 },

    #[error("not implemented: {0}")]
    NotImplemented(String),

    #[error("insufficient data: need at least {needed} trials, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("strategy bug: {0}")]
    StrategyBug(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MarketError>;

pub(crate) fn invalid_param(msg: impl Into<String>) -> MarketError {
    MarketError::InvalidParameter(msg.into())
}

pub(crate) fn invalid_state(msg: impl Into<String>) -> MarketError {
    MarketError::InvalidState(msg.into())
}
