//! Rapid stream labeling.
//!
//! Items are flashed to workers in randomized streams at a fixed interval and
//! workers press a key whenever they see a positive. Keypresses arrive late
//! and are sometimes missed or spurious; the [`decoder`] recovers labels by
//! attributing each keypress to the items shown shortly before it and
//! combining evidence over workers who saw the items in different orders.
//!
//! Modules:
//! - [`model`]: shared domain types and task validation
//! - [`scheduler`]: randomized per-worker streams with gold items and countdown
//! - [`decoder`]: delay fitting, keypress attribution, scoring, thresholds, qualification
//! - [`simulator`]: synthetic workers for offline experiments
//! - [`cascade`]: multi-class labeling as sequential binary passes
//! - [`eval`]: metrics, majority vote and speedup accounting
//! - [`experiments`]: simulated image verification runs
//! - [`taskfile`]: line-delimited task and session files

pub mod cascade;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod model;
pub mod scheduler;
pub mod simulator;
pub mod taskfile;

pub use error::{Error, Result};
pub use model::{
    validate_task, Decision, DelayModel, Item, ItemId, KeypressEvent, LabelEstimate, Payload,
    SessionId, TaskConfig, TaskId, TaskKind, ThresholdSetting, WorkerId, WorkerSession,
};
pub use scheduler::{build_streams, countdown_plan, StreamSchedule};
