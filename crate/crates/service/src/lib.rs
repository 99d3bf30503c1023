//! Task hosting for rapid stream labeling.
//!
//! Every task owns an append-only JSONL event log; the in-memory
//! [`TaskState`] is nothing more than a fold over that log, so a restart
//! replays the log (starting from the latest snapshot when one exists) and
//! ends up in exactly the state it had before.
//!
//! [`Service`] holds the operations and [`http::router`] exposes them under
//! `/v1`.

mod clock;
mod error;
pub mod http;
mod identity;
mod log;
mod manifest;
mod service;
mod state;

pub use clock::{Clock, ManualClock, SystemClock};
pub use error::{Result, ServiceError};
pub use identity::{OpaqueTokens, WorkerIdentity};
pub use log::{read_log, Event, LogEntry, LogWriter};
pub use manifest::{EventBatch, Manifest, ManifestSlot, INSTRUCTIONS, SCHEMA_VERSION};
pub use service::{
    replay_log, CreateOutcome, DecodeRequest, Service, ServiceConfig, SessionGrant, SubmitOutcome,
    SubmitStatus, TaskSummary,
};
pub use state::{DecodeRecord, SessionRecord, SessionState, TaskState, TaskStatus};
