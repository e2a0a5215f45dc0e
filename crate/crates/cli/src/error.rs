use std::path::PathBuf;

/// Process exit status for each failure class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] blrp::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        use blrp::Error as E;
        match self {
            CliError::Usage(_) => ExitCode::Usage,
            CliError::Parse { .. } => ExitCode::Data,
            CliError::Core(E::Numeric(_)) => ExitCode::Numeric,
            CliError::Core(E::Index(_)) => ExitCode::Usage,
            CliError::Core(_) => ExitCode::Data,
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Core(blrp::Error::Io { path, source })
}
