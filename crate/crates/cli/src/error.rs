use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unknown config keys, unusable config values.
    #[error("usage error: {0}")]
    Usage(String),
    /// Missing or unreadable inputs (checkpoints, data files, locked runs).
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] synprobe::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        use synprobe::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) => 2,
                E::Numeric(_) | E::GradientCheck(_) => 4,
                E::Input(_) | E::Parse(_) | E::Structural(_) | E::Degenerate(_) | E::Io(_) | E::Json(_) => 3,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
