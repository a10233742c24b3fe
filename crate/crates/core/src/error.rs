use thiserror::Error;

/// Unified error type for the whole pipeline.
///
/// `Shape` and `Contract` are internal runtime failures and map to exit
/// code 1 in the CLI; everything else is a caller mistake (bad configs,
/// bad files, bad IO) and maps to 2.
#[derive(Debug, Error)]
pub enum HepaError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HepaError {
    pub fn shape(msg: impl Into<String>) -> Self {
        HepaError::Shape(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        HepaError::Contract(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        HepaError::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        HepaError::Data(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        HepaError::Checkpoint(msg.into())
    }
}
