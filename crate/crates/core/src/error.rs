use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown condition `{0}`")]
    UnknownCondition(String),

    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },

    #[error("batch size {batch_size} outside 1..={dataset_size}")]
    BatchSize { batch_size: usize, dataset_size: usize },

    #[error("field too small: {0}")]
    DegenerateField(String),

    #[error("insufficient scales: {usable} usable box sizes, need at least 3")]
    InsufficientScales { usable: usize },

    #[error("no usable field in sequence")]
    NoUsableFields,

    #[error("empty input")]
    EmptyInput,

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("render cancelled")]
    Cancelled,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
