use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("regression at date {date} failed: {reason}")]
    Fit { date: f64, reason: String },

    #[error("no fitted model for {0}")]
    Lookup(String),

    #[error("non-finite value at layer {layer}")]
    Numeric { layer: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged at epoch {epoch}")]
    Training { epoch: usize },

    #[error("backtest of {method} failed at date {date}: {source}")]
    Backtest {
        method: String,
        date: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
