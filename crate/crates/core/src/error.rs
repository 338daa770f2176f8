use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the degenerate threshold")]
    ZeroNorm { norm: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("empty protocol")]
    EmptyProtocol,

    #[error("protocol mismatch: {0}")]
    ProtocolMismatch(String),

    #[error("a teacher checkpoint is required for method {0}")]
    MissingTeacher(String),

    #[error("loss diverged at iteration {iteration}: {value}")]
    DivergedLoss { iteration: usize, value: f64 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable, greppable code printed by the CLI ahead of the message.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ZeroNorm { .. } => "E_ZERO_NORM",
            Error::DimensionMismatch(_) => "E_DIM_MISMATCH",
            Error::ShapeMismatch(_) => "E_SHAPE_MISMATCH",
            Error::LabelOutOfRange { .. } => "E_LABEL_RANGE",
            Error::EmptyBatch => "E_EMPTY_BATCH",
            Error::NonPositiveTemperature(_) => "E_TEMPERATURE",
            Error::InvalidConfig(_) => "E_INVALID_CONFIG",
            Error::InsufficientSamples(_) => "E_INSUFFICIENT_SAMPLES",
            Error::EmptyProtocol => "E_EMPTY_PROTOCOL",
            Error::ProtocolMismatch(_) => "E_PROTOCOL_MISMATCH",
            Error::MissingTeacher(_) => "E_MISSING_TEACHER",
            Error::DivergedLoss { .. } => "E_DIVERGED",
            Error::CorruptCheckpoint(_) => "E_CORRUPT_CHECKPOINT",
            Error::CorruptDataset(_) => "E_CORRUPT_DATASET",
            Error::Io { .. } => "E_IO",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
