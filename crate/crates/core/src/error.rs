use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("network needs at least an input and an output layer")]
    EmptyLayers,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("supervisor failed: {0}")]
    Supervisor(#[from] crate::meta::SupervisorError),

    #[error("malformed episode log {episode}: {reason}")]
    MalformedLog { episode: usize, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("run interrupted by observer: {0}")]
    Observer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }
}
