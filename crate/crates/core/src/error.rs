use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no common time span")]
    NoCommonSpan,
    #[error("timestamps of series `{agent}` are not strictly increasing at index {index}")]
    NonMonotonicTime { agent: String, index: usize },
    #[error("degenerate channel `{0}`: max equals min")]
    DegenerateChannel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("not enough samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("empty node set")]
    EmptyNodeSet,
    #[error("word id {id} out of range for {n_words} words")]
    WordOutOfRange { id: usize, n_words: usize },
    #[error("length mismatch: {left} scores vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("ROC undefined: labels contain a single class")]
    RocUndefined,
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("missing model for agent `{0}`")]
    MissingModel(String),
    #[error("{}: line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("unsupported model format `{0}`")]
    ModelFormat(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the error was caused by bad input rather than a defect.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NotPositiveDefinite)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
