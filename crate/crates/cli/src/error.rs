use std::path::PathBuf;

use phasecomp::Error;
use phasecomp_nn::NnError;

/// Failures of a command, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("digest mismatch: {0}")]
    Digest(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::MissingCheckpoint(_) => 3,
            CliError::Digest(_) => 4,
            CliError::Data(_) => 5,
        }
    }

    /// Maps a library error raised while reading inputs (corpus, motion
    /// files): anything but a digest problem is a data error.
    pub fn data(e: Error) -> Self {
        match e {
            Error::DigestMismatch(m) => CliError::Digest(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::DigestMismatch(m) => CliError::Digest(m),
            Error::Untrained(m) => CliError::Other(format!("model is untrained: {m}")),
            e @ (Error::Invalid(_) | Error::LengthOutOfRange { .. } | Error::AnchorOutOfRange { .. } | Error::UnknownToken(_)) => {
                CliError::Config(e.to_string())
            }
            e @ (Error::Format { .. } | Error::ChannelMismatch { .. } | Error::EmptyDataset | Error::Io(_)) => {
                CliError::Data(e.to_string())
            }
            Error::Nn(NnError::Checkpoint(m)) => CliError::Data(format!("checkpoint: {m}")),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(format!("i/o: {e}"))
    }
}
