use crate::config::ConfigError;

/// Failure of a workbench command, mapped onto a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerical(fvrom::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing artifacts of stage `{stage}`; run `fvrom {stage}` first")]
    Missing { stage: String },
    #[error("stale artifacts of stage `{stage}` ({reason}); rerun `fvrom {stage}`")]
    Stale { stage: String, reason: String },
}

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

impl From<fvrom::Error> for CliError {
    fn from(e: fvrom::Error) -> Self {
        match e {
            fvrom::Error::Io(e) => CliError::Io(e),
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(e) => match e {
                fvrom::Error::Format(_) | fvrom::Error::Parse { .. } => EXIT_IO,
                _ => EXIT_NUMERICAL,
            },
            CliError::Io(_) | CliError::Missing { .. } | CliError::Stale { .. } => EXIT_IO,
        }
    }
}
