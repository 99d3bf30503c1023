use thiserror::Error;

use crate::model::ItemId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no items")]
    NoItems,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("gold pool is empty but gold_fraction is {0}")]
    EmptyGoldPool(f64),

    #[error("insufficient calibration data: {found} matched delays, need at least {required}")]
    InsufficientCalibration { found: usize, required: usize },

    #[error("invalid delay model: {0}")]
    InvalidDelayModel(String),

    #[error("schedule/universe mismatch: item {0} is not part of the task")]
    UniverseMismatch(ItemId),

    #[error("insufficient gold: {positives} positives and {negatives} negatives, need at least {required} of each")]
    InsufficientGold {
        positives: usize,
        negatives: usize,
        required: usize,
    },

    #[error("stream contains no gold positives")]
    NoGoldPositives,

    #[error("missing truth for item {0}")]
    MissingTruth(ItemId),

    #[error("at least {required} worker profiles are needed, got {found}")]
    NotEnoughProfiles { found: usize, required: usize },

    #[error("malformed session: {0}")]
    MalformedSession(String),

    #[error("task file line {line}: {message}")]
    TaskFile { line: usize, message: String },

    #[error("missing report input: {0}")]
    MissingReportInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
