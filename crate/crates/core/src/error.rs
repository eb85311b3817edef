use thiserror::Error;

/// Errors reported by the numeric and data layers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("row {row} has (near-)zero norm and cannot be normalized")]
    ZeroVector { row: usize },

    #[error("backward called without a forward pass since the last parameter update")]
    StaleCache,

    #[error("row {row} is not unit-norm but the operation requires unit-norm embeddings")]
    NormViolation { row: usize },

    #[error("class {class} has fewer than two samples; triplet mining needs l >= 2")]
    InsufficientPositives { class: usize },

    #[error("batch composition violated: {0}")]
    BatchComposition(String),

    #[error("mean-singular-value bounds degenerate (min(b, d) = 1 gives L = U)")]
    DegenerateBounds,

    #[error("K = {k} must be smaller than the number of points n = {n}")]
    InvalidK { k: usize, n: usize },

    #[error("malformed file: {0}")]
    FormatError(String),

    #[error("truncated file: expected {expected} bytes of payload, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
