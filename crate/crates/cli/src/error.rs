use std::process::ExitCode;

use hypodens_core::Error as CoreError;
use thiserror::Error;

/// Failures of a CLI run, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("unknown model `{0}` (built-in models: {list})", list = hypodens_core::fields::BUILTIN_MODELS.join(", "))]
    UnknownModel(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("cannot write output: {0}")]
    Output(String),

    #[error("{0}")]
    Numerical(#[from] CoreError),

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub const EXIT_FAILURE: u8 = 1;
    pub const EXIT_USAGE: u8 = 2;
    pub const EXIT_UNKNOWN_MODEL: u8 = 3;
    pub const EXIT_CONFIG: u8 = 4;
    pub const EXIT_OUTPUT: u8 = 5;

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => Self::EXIT_USAGE,
            Self::UnknownModel(_) | Self::Numerical(CoreError::UnknownModel(_)) => Self::EXIT_UNKNOWN_MODEL,
            Self::Config(_) | Self::Numerical(CoreError::ModelSpec(_)) => Self::EXIT_CONFIG,
            Self::Output(_) => Self::EXIT_OUTPUT,
            Self::Numerical(_) | Self::Failed(_) => Self::EXIT_FAILURE,
        }
    }
}

impl From<CliError> for ExitCode {
    fn from(e: CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
