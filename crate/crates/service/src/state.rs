//! Task state as a fold over the event log.

use std::collections::BTreeMap;

use rapidlabel_core::decoder::{DecodeOverrides, DecodeResult, QualificationResult};
use rapidlabel_core::scheduler::{build_stream, chunk_count};
use rapidlabel_core::{
    Item, KeypressEvent, SessionId, TaskConfig, TaskId, TaskKind, WorkerId, WorkerSession,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::log::{Event, LogEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Draft,
    Collecting,
    Decoding,
    Complete,
}

impl TaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Draft => "draft",
            TaskStatus::Collecting => "collecting",
            TaskStatus::Decoding => "decoding",
            TaskStatus::Complete => "complete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Open,
    Submitted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: SessionId,
    pub worker_id: WorkerId,
    pub chunk: usize,
    pub replica: usize,
    pub state: SessionState,
    pub opened_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<KeypressEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_onsets_ms: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualification: Option<QualificationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    /// Decode even if some replicas are still missing.
    #[serde(default)]
    pub force: bool,
    #[serde(flatten)]
    pub overrides: DecodeOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub request: DecodeRequest,
    pub result: DecodeResult,
    pub completed_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub task_id: TaskId,
    pub content_hash: String,
    pub items: Vec<Item>,
    pub config: TaskConfig,
    pub status: TaskStatus,
    pub created_at_ms: u64,
    /// Sequence number of the last applied log entry.
    pub last_seq: u64,
    pub sessions: BTreeMap<SessionId, SessionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decode: Option<DecodeRecord>,
}

impl TaskState {
    /// Starts a state from the first entry of a log.
    pub fn from_created(entry: &LogEntry) -> Result<Self> {
        match &entry.event {
            Event::TaskCreated {
                task_id,
                content_hash,
                items,
                config,
            } if entry.seq == 1 => Ok(Self {
                task_id: task_id.clone(),
                content_hash: content_hash.clone(),
                items: items.clone(),
                config: config.clone(),
                status: TaskStatus::Draft,
                created_at_ms: entry.at_ms,
                last_seq: 1,
                sessions: BTreeMap::new(),
                decode: None,
            }),
            other => Err(replay_error(format!(
                "log must start with task-created at seq 1, found {} at seq {}",
                other.kind(),
                entry.seq
            ))),
        }
    }

    pub fn apply(&mut self, entry: &LogEntry) -> Result<()> {
        if entry.seq != self.last_seq + 1 {
            return Err(replay_error(format!(
                "expected seq {}, found {}",
                self.last_seq + 1,
                entry.seq
            )));
        }
        match &entry.event {
            Event::TaskCreated { .. } => {
                return Err(replay_error("second task-created entry".into()));
            }
            Event::SessionOpened {
                session_id,
                worker_id,
                chunk,
                replica,
            } => {
                if self.status == TaskStatus::Draft {
                    self.status = TaskStatus::Collecting;
                }
                self.sessions.insert(
                    session_id.clone(),
                    SessionRecord {
                        session_id: session_id.clone(),
                        worker_id: worker_id.clone(),
                        chunk: *chunk,
                        replica: *replica,
                        state: SessionState::Open,
                        opened_at_ms: entry.at_ms,
                        closed_at_ms: None,
                        events: Vec::new(),
                        actual_onsets_ms: None,
                        idempotency_key: None,
                        qualification: None,
                        reject_reason: None,
                    },
                );
            }
            Event::EventsSubmitted {
                session_id,
                idempotency_key,
                events,
                actual_onsets_ms,
                qualification,
            } => {
                let s = self.open_session_mut(session_id)?;
                s.state = SessionState::Submitted;
                s.closed_at_ms = Some(entry.at_ms);
                s.events = events.clone();
                s.actual_onsets_ms = actual_onsets_ms.clone();
                s.idempotency_key = idempotency_key.clone();
                s.qualification = qualification.clone();
            }
            Event::SessionRejected {
                session_id,
                idempotency_key,
                events,
                reason,
            } => {
                let s = self.open_session_mut(session_id)?;
                s.state = SessionState::Rejected;
                s.closed_at_ms = Some(entry.at_ms);
                s.events = events.clone();
                s.idempotency_key = idempotency_key.clone();
                s.reject_reason = Some(reason.clone());
            }
            Event::DecodeCompleted { request, result } => {
                self.status = TaskStatus::Complete;
                self.decode = Some(DecodeRecord {
                    request: request.clone(),
                    result: result.clone(),
                    completed_at_ms: entry.at_ms,
                });
            }
        }
        self.last_seq = entry.seq;
        Ok(())
    }

    fn open_session_mut(&mut self, id: &SessionId) -> Result<&mut SessionRecord> {
        match self.sessions.get_mut(id) {
            Some(s) if s.state == SessionState::Open => Ok(s),
            Some(_) => Err(replay_error(format!("session {id} closed twice"))),
            None => Err(replay_error(format!("session {id} never opened"))),
        }
    }

    pub fn chunks(&self) -> usize {
        chunk_count(&self.items, &self.config)
    }

    pub fn redundancy(&self) -> usize {
        self.config.redundancy as usize
    }

    /// Open or submitted sessions hold their replica; rejected ones free it.
    pub fn replica_taken(&self, chunk: usize, replica: usize) -> bool {
        self.sessions.values().any(|s| {
            s.chunk == chunk && s.replica == replica && s.state != SessionState::Rejected
        })
    }

    /// The next `(chunk, replica)` for `worker`, or `None` when every
    /// remaining replica sits in a chunk the worker has already seen.
    pub fn next_assignment(&self, worker: &WorkerId) -> Option<(usize, usize)> {
        if self.config.kind == TaskKind::Qualification {
            // Every attempt gets its own shuffle of the single gold stream.
            return Some((0, self.sessions.len()));
        }
        (0..self.chunks())
            .filter(|&c| {
                !self
                    .sessions
                    .values()
                    .any(|s| s.chunk == c && &s.worker_id == worker)
            })
            .find_map(|c| {
                (0..self.redundancy())
                    .find(|&r| !self.replica_taken(c, r))
                    .map(|r| (c, r))
            })
    }

    pub fn submitted_count(&self) -> usize {
        self.sessions
            .values()
            .filter(|s| s.state == SessionState::Submitted)
            .count()
    }

    /// Submitted replicas counted per chunk, capped at the redundancy.
    pub fn submitted_replicas(&self) -> usize {
        let mut per_chunk = vec![0usize; self.chunks()];
        for s in self.sessions.values() {
            if s.state == SessionState::Submitted {
                if let Some(n) = per_chunk.get_mut(s.chunk) {
                    *n += 1;
                }
            }
        }
        per_chunk.iter().map(|&n| n.min(self.redundancy())).sum()
    }

    pub fn required_replicas(&self) -> usize {
        self.chunks() * self.redundancy()
    }

    /// Rebuilds the worker session for a record, schedule included.
    pub fn worker_session(&self, record: &SessionRecord) -> Result<WorkerSession> {
        Ok(WorkerSession {
            session_id: record.session_id.clone(),
            worker_id: record.worker_id.clone(),
            task_id: self.task_id.clone(),
            stream: build_stream(&self.items, &self.config, record.chunk, record.replica)?,
            events: record.events.clone(),
            status: match record.state {
                SessionState::Open => rapidlabel_core::model::SessionStatus::Pending,
                SessionState::Submitted => rapidlabel_core::model::SessionStatus::Submitted,
                SessionState::Rejected => rapidlabel_core::model::SessionStatus::Rejected,
            },
            actual_onsets_ms: record.actual_onsets_ms.clone(),
        })
    }

    /// Canonical serialized form; two states are equal iff these bytes are.
    pub fn snapshot_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }
}

fn replay_error(message: String) -> ServiceError {
    ServiceError::Replay(message)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rapidlabel_core::Payload;

    fn created() -> LogEntry {
        LogEntry {
            seq: 1,
            at_ms: 10,
            event: Event::TaskCreated {
                task_id: "t1".into(),
                content_hash: "h".into(),
                items: vec![Item::new("a", Payload::text("x"), 0.1)],
                config: TaskConfig {
                    gold_fraction: 0.0,
                    ..TaskConfig::default()
                },
            },
        }
    }

    fn opened(seq: u64) -> LogEntry {
        LogEntry {
            seq,
            at_ms: 20,
            event: Event::SessionOpened {
                session_id: "t1.s0".into(),
                worker_id: "w".into(),
                chunk: 0,
                replica: 0,
            },
        }
    }

    #[test]
    fn sequence_gaps_are_refused() {
        let mut s = TaskState::from_created(&created()).unwrap();
        assert!(s.apply(&opened(3)).is_err());
        s.apply(&opened(2)).unwrap();
        assert_eq!(s.status, TaskStatus::Collecting);
        assert!(s.replica_taken(0, 0));
    }

    #[test]
    fn must_start_with_creation() {
        assert!(TaskState::from_created(&opened(1)).is_err());
    }

    #[test]
    fn closing_twice_is_refused() {
        let mut s = TaskState::from_created(&created()).unwrap();
        s.apply(&opened(2)).unwrap();
        let reject = |seq| LogEntry {
            seq,
            at_ms: 30,
            event: Event::SessionRejected {
                session_id: "t1.s0".into(),
                idempotency_key: None,
                events: vec![],
                reason: "r".into(),
            },
        };
        s.apply(&reject(3)).unwrap();
        assert!(!s.replica_taken(0, 0));
        assert!(s.apply(&reject(4)).is_err());
    }
}
