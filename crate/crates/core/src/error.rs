use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of bounds: {reason}")]
    Bounds { index: usize, reason: String },

    #[error("series of length {len} is shorter than window size {w}")]
    EmptyPartition { len: usize, w: usize },

    #[error("window size {0} is too small, at least 2 samples are required")]
    WindowSize(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training episode {index} carries an anomaly onset at t={onset}")]
    TrainingContamination { index: usize, onset: usize },

    #[error("episode of length {len} is shorter than window size {w}")]
    EpisodeTooShort { len: usize, w: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("unsupported model version {found}, expected {expected}")]
    Version { found: u64, expected: u64 },

    #[error("failed to load model: {0}")]
    Load(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
