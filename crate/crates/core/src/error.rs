use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed call: shapes, indices or token ids out of range.
    #[error("input error: {0}")]
    Input(String),
    /// Non-finite values in parameters, losses or gradients.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Invalid configuration or an unusable dataset for the requested run.
    #[error("config error: {0}")]
    Config(String),
    /// A data file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
    /// Graph structure violates an algorithm precondition.
    #[error("structural error: {0}")]
    Structural(String),
    /// Analysis input too small to be meaningful (e.g. < 2 content tokens).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Gradient check exceeded its tolerance.
    #[error("gradient check failed: {0}")]
    GradientCheck(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
