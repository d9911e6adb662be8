use thiserror::Error;

use reparam_core::Error as CoreError;

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, run specification, or input files.
    #[error("{0}")]
    Usage(String),

    /// Divergence, a failed equivalence check, or a non-finite value.
    #[error("{0}")]
    Numeric(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) | CliError::Core(CoreError::NonFinite(_)) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }
}
