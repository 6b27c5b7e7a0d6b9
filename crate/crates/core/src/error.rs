use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column count mismatch: {left} vs {right}")]
    ColumnCountMismatch { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mode {mode} out of range for a {modes}-mode tensor")]
    ModeOutOfRange { mode: usize, modes: usize },

    #[error("index {index} out of range for mode {mode} of size {size}")]
    IndexOutOfRange { mode: usize, index: usize, size: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("factor {mode} has a zero-norm column {column}")]
    ZeroComponent { mode: usize, column: usize },

    #[error("dense reconstruction of {entries} entries exceeds the cap of {cap}")]
    ReconstructionTooLarge { entries: usize, cap: usize },

    #[error("rank estimation failed: every trial diverged")]
    RankEstimationFailed,

    #[error("batch contains no slices")]
    EmptyBatch,

    #[error("batch rejected: {0}")]
    BatchRejected(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
