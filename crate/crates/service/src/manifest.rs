//! Wire schemas shared with the browser player.

use rapidlabel_core::scheduler::{countdown_plan, CountdownFrame};
use rapidlabel_core::{KeypressEvent, Payload, SessionId, TaskId, TaskKind, WorkerId};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::state::{SessionRecord, TaskState};

pub const SCHEMA_VERSION: u32 = 1;

pub const INSTRUCTIONS: &str = "Items will flash by one after another, far faster than you \
can study each one. Press the space bar as soon as you notice a positive item. Nobody \
catches everything at this speed: missing items, pressing a little late and the odd \
accidental press are all expected, and the results are computed with that in mind. Do not \
stop or go back after a mistake, just keep watching.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSlot {
    pub index: usize,
    /// Scheduled onset relative to the first item.
    pub onset_ms: f64,
    pub payload: Payload,
}

/// Everything a client needs to play one stream. Gold labels and item ids
/// are left out on purpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub task_id: TaskId,
    pub session_id: SessionId,
    pub worker_id: WorkerId,
    pub kind: TaskKind,
    pub display_interval_ms: u32,
    /// Countdown frames, timed from the start of the countdown.
    pub countdown: Vec<CountdownFrame>,
    /// Time between the first countdown frame and the first item.
    pub stream_offset_ms: f64,
    pub slots: Vec<ManifestSlot>,
    /// Keypresses are accepted until this long after the last item.
    pub lookback_ms: f64,
    pub instructions: String,
}

impl Manifest {
    pub fn build(state: &TaskState, record: &SessionRecord) -> Result<Self> {
        let session = state.worker_session(record)?;
        let payloads: std::collections::BTreeMap<_, _> = state
            .items
            .iter()
            .map(|i| (&i.item_id, &i.payload))
            .collect();
        let delta = state.config.display_interval_ms;
        let countdown = countdown_plan(&state.config);
        let slots = session
            .stream
            .slots
            .iter()
            .enumerate()
            .map(|(index, s)| ManifestSlot {
                index,
                onset_ms: s.onset_ms,
                payload: payloads[&s.item_id].clone(),
            })
            .collect();
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            task_id: state.task_id.clone(),
            session_id: record.session_id.clone(),
            worker_id: record.worker_id.clone(),
            kind: state.config.kind,
            display_interval_ms: delta,
            stream_offset_ms: countdown.len() as f64 * f64::from(delta),
            countdown,
            slots,
            lookback_ms: state.config.lookback_ms,
            instructions: INSTRUCTIONS.to_string(),
        })
    }
}

/// A client's keypress log for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBatch {
    pub schema_version: u32,
    /// Retries with the same key get the original answer back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    /// Keypress times relative to the first item onset.
    pub events: Vec<KeypressEvent>,
    /// Measured onset of every slot, same origin as `events`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_onsets_ms: Option<Vec<f64>>,
}

impl EventBatch {
    pub fn new(events: Vec<KeypressEvent>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            idempotency_key: None,
            events,
            actual_onsets_ms: None,
        }
    }

    pub fn with_key(mut self, key: impl Into<String>) -> Self {
        self.idempotency_key = Some(key.into());
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_round_trips() {
        let mut b = EventBatch::new(vec![KeypressEvent::human(412.25), KeypressEvent::human(1e3 / 3.0)])
            .with_key("retry-1");
        b.actual_onsets_ms = Some(vec![0.0, 100.4, 199.9]);
        let text = serde_json::to_string(&b).unwrap();
        assert_eq!(serde_json::from_str::<EventBatch>(&text).unwrap(), b);
        assert!(text.contains("\"schema_version\":1"));
    }

    #[test]
    fn minimal_batch_parses() {
        let b: EventBatch =
            serde_json::from_str(r#"{"schema_version":1,"events":[{"t_ms":500.5}]}"#).unwrap();
        assert_eq!(b.events, vec![KeypressEvent::human(500.5)]);
        assert!(b.idempotency_key.is_none());
    }
}
