use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Numeric(#[from] levy_refract::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// The command ran but one or more checks failed.
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
    /// Help or version text requested by the user.
    #[error("{0}")]
    Info(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) | CliError::ChecksFailed(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
