use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid pattern: {0}")]
    InvalidPattern(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("pattern {pattern} has no potential parent in the working pattern set")]
    OrphanPattern { pattern: String },

    #[error("enumeration would yield {count} trees, above the cap of {cap}")]
    EnumerationCap { count: String, cap: u64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid tilt for component {component}, coordinate {coordinate}: {reason}")]
    InvalidTilt {
        component: usize,
        coordinate: usize,
        reason: String,
    },

    #[error("value outside family support at coordinate {coordinate}: {value}")]
    Support { coordinate: usize, value: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("not enough rows for pattern {pattern}: {rows} < {required}")]
    TooFewRows {
        pattern: String,
        rows: usize,
        required: usize,
    },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("rejection bound violated for pattern {pattern}: odds/U = {ratio}")]
    BoundViolation { pattern: String, ratio: f64 },

    #[error("data error at row {row}, column {column}: {reason}")]
    Data { row: usize, column: usize, reason: String },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
