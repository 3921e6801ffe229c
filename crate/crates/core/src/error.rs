use thiserror::Error;

/// Errors produced by the search library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("operation removed from policy: id {0}")]
    MaskedOperation(usize),

    #[error("cannot remove all operations (k = {requested}, unmasked = {unmasked})")]
    MaskAll { requested: usize, unmasked: usize },

    #[error("gradient overflow: non-finite gradient component at index {0}")]
    GradientOverflow(usize),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported checkpoint version: {0}")]
    CheckpointVersion(u8),

    #[error("architecture mismatch: checkpoint has `{found}`, expected `{expected}`")]
    ArchMismatch { expected: String, found: String },

    #[error("malformed CIFAR record: {0}")]
    MalformedCifar(String),

    #[error("invalid label: {0}")]
    InvalidLabel(u8),

    #[error("split oversubscribed: requested {requested} from {available} samples")]
    SplitOversubscribed { requested: usize, available: usize },

    #[error("zero variance input")]
    ZeroVariance,

    #[error("malformed policy file: {0}")]
    MalformedPolicy(String),

    #[error("malformed state file: {0}")]
    MalformedState(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset not found: {0}")]
    DatasetNotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
