use tgm::TgmError;

/// A failure with the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    /// Invalid configuration or a missing checkpoint.
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    /// Maze file missing or malformed.
    pub fn maze(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn corrupt(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<TgmError> for CliError {
    fn from(e: TgmError) -> Self {
        match e {
            TgmError::InvalidConfig(_) => Self::config(e.to_string()),
            TgmError::MazeParse(_) => Self::maze(e.to_string()),
            TgmError::Checkpoint(_) => Self::corrupt(e.to_string()),
            other => Self::runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        // A closed stdout (e.g. piped into `head`) is not a failure.
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            return Self { code: 0, message: String::new() };
        }
        Self::runtime(e.to_string())
    }
}
