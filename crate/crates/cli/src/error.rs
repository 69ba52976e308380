use spotscape::Error as CoreError;

/// Failure of one command. `exit_code` separates bad input (1) from failures
/// that happen while doing the work (2).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Input(CoreError),
    #[error("{0}")]
    Runtime(CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    /// Classifies a library error raised while doing the actual work.
    pub fn runtime(err: CoreError) -> Self {
        CliError::Runtime(err)
    }
}

/// Library errors raised while reading and validating inputs are usage
/// errors, except I/O failures and numeric breakdowns.
impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::Io(_)
            | CoreError::Numeric(_)
            | CoreError::DegenerateRow { .. }
            | CoreError::Tape(_) => CliError::Runtime(err),
            _ => CliError::Input(err),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
