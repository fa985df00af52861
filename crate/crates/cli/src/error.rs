use renewal_mcmc_core::{Error, ErrorClass};

/// Failure of a command, classified by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// Maps a library error raised while validating configuration onto a
    /// config error located at `pointer`.
    pub fn at(pointer: &str, err: Error) -> Self {
        match err.class() {
            ErrorClass::Usage => match &err {
                Error::Parameter { name, reason } => CliError::Config(format!("{pointer}/{name}: {reason}")),
                _ => CliError::Config(format!("{pointer}: {err}")),
            },
            _ => err.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let msg = err.to_string();
        match err.class() {
            ErrorClass::Usage => CliError::Config(msg),
            ErrorClass::Data => CliError::Data(msg),
            ErrorClass::Numerical => CliError::Numerical(msg),
        }
    }
}
