use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported variant `{name}`: {reason}")]
    UnsupportedVariant { name: String, reason: String },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("training diverged at step {step} (loss {loss}); last good checkpoint: {}",
        .last_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Diverged {
        step: usize,
        loss: f64,
        last_checkpoint: Option<PathBuf>,
    },

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Failures raised while encoding or decoding a tensor container.
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic: expected \"HLT1\", found {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("truncated container: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("trailing bytes after last record: {0}")]
    TrailingBytes(usize),
    #[error("duplicate record name `{0}`")]
    DuplicateName(String),
    #[error("invalid record `{name}`: {reason}")]
    InvalidRecord { name: String, reason: String },
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("record name is not valid utf-8")]
    BadName,
    #[error("missing record `{0}`")]
    MissingRecord(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
