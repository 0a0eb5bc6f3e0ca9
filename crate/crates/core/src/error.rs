use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("treatment indicator {value} at t={t} is not 0 or 1")]
    InvalidTreatment { t: usize, value: u8 },

    #[error("assignment probability {prob} at t={t} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange { t: usize, prob: f64 },

    #[error("length mismatch: {what} (expected {expected}, got {actual})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("variance is zero for every contribution; the statistic is undefined")]
    DegenerateVariance,

    #[error("order {order_id}: {reason}")]
    InvalidOrder { order_id: String, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
