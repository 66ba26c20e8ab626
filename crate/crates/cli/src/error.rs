use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("training diverged at step {step} (loss {loss}); last checkpoint: {}", last_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Diverged {
        step: usize,
        loss: f64,
        last_checkpoint: Option<PathBuf>,
    },
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(hlnet::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Diverged { .. } | CliError::Core(hlnet::Error::NonFiniteGradient { .. }) => EXIT_DIVERGED,
            CliError::Core(hlnet::Error::InvalidArgument(_) | hlnet::Error::UnsupportedVariant { .. }) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

impl From<hlnet::Error> for CliError {
    fn from(e: hlnet::Error) -> Self {
        match e {
            hlnet::Error::Diverged {
                step,
                loss,
                last_checkpoint,
            } => CliError::Diverged {
                step,
                loss,
                last_checkpoint,
            },
            other => CliError::Core(other),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub trait IoContext<T> {
    fn ctx(self, context: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn ctx(self, context: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Io {
            context: context(),
            source,
        })
    }
}
