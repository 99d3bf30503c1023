use thiserror::Error;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid task: {}", violations.join("; "))]
    Validation { violations: Vec<String> },

    #[error("unknown task {0}")]
    UnknownTask(String),

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("unknown worker token")]
    UnknownWorker,

    #[error("qualification required")]
    QualificationRequired,

    #[error("no qualification task")]
    NoQualificationTask,

    #[error("task fully assigned")]
    FullyAssigned,

    #[error("task is {0} and no longer accepts this request")]
    TaskClosed(&'static str),

    #[error("session {0} is not open")]
    SessionClosed(String),

    #[error("duplicate submission for session {0}")]
    DuplicateSubmission(String),

    #[error("malformed submission: {0}")]
    Malformed(String),

    #[error("insufficient sessions: {submitted} of {required} replicas submitted")]
    InsufficientSessions { submitted: usize, required: usize },

    #[error("no results for task {0}")]
    NoResults(String),

    #[error("{0}")]
    NotDecodable(String),

    #[error("corrupt log {path}: {message}")]
    CorruptLog { path: String, message: String },

    #[error("log replay failed: {0}")]
    Replay(String),

    #[error(transparent)]
    Core(#[from] rapidlabel_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
