use std::io;
use std::path::PathBuf;

use converter_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for failed checks and runtime failures, 2 for usage and configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig(_)
                | CoreError::InvalidHyperparameter(_)
                | CoreError::Divisibility { .. }
                | CoreError::SizeGuard { .. }
                | CoreError::OutOfVocab { .. }
                | CoreError::LengthOverflow { .. }
                | CoreError::UnregisteredOp(_) => 2,
                _ => 1,
            },
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
