use dmlbench_train::TrainError;
use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid flags, incompatible settings or unreadable inputs.
    #[error("{0}")]
    Config(String),
    /// Training divergence, failed verification or an output that could not be written.
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Failure(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
