use thiserror::Error;

/// Errors surfaced by the command-line harness, each with a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{0}")]
    Domain(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Domain(_) | CliError::Config { .. } => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<metapac_core::Error> for CliError {
    fn from(e: metapac_core::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Domain(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Domain(format!("csv error: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
