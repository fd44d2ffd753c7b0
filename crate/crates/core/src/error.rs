use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] phasecomp_nn::NnError),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("segment length {n} outside [{min}, {max}]")]
    LengthOutOfRange { n: usize, min: usize, max: usize },
    #[error("anchor {anchor} outside [0, {n})")]
    AnchorOutOfRange { anchor: usize, n: usize },
    #[error("expected {expected} channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("unknown action token `{0}`")]
    UnknownToken(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("model is untrained: {0}")]
    Untrained(String),
    #[error("checkpoint mismatch: {0}")]
    DigestMismatch(String),
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { what, msg: msg.into() }
    }
}
