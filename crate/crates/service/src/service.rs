use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rapidlabel_core::decoder::{
    decode, matched_delays, qualify, DecodeResult, QualificationResult, QUALIFICATION_WINDOW_MS,
};
use rapidlabel_core::{validate_task, Item, SessionId, TaskConfig, TaskId, TaskKind, WorkerId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Clock;
use crate::error::{Result, ServiceError};
use crate::log::{read_log, Event, LogEntry, LogWriter};
use crate::manifest::{EventBatch, Manifest, SCHEMA_VERSION};
pub use crate::state::DecodeRequest;
use crate::state::{SessionRecord, SessionState, TaskState, TaskStatus};

const LOG_FILE: &str = "log.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Write a snapshot after this many appends to a task; 0 disables.
    pub snapshot_every: u64,
    /// fsync every append.
    pub sync: bool,
    /// Labeling sessions need a passed qualification.
    pub require_qualification: bool,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            snapshot_every: 100,
            sync: false,
            require_qualification: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateOutcome {
    pub task_id: TaskId,
    /// False when an identical task already existed.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionGrant {
    pub session_id: SessionId,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub session_id: SessionId,
    pub status: SubmitStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// The replica went back into the queue for another worker.
    #[serde(default)]
    pub requeued: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualification: Option<QualificationResult>,
}

impl SubmitOutcome {
    fn of(record: &SessionRecord) -> Self {
        let rejected = record.state == SessionState::Rejected;
        Self {
            session_id: record.session_id.clone(),
            status: if rejected {
                SubmitStatus::Rejected
            } else {
                SubmitStatus::Accepted
            },
            reason: record.reject_reason.clone(),
            requeued: rejected,
            qualification: record.qualification.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: TaskId,
    pub kind: TaskKind,
    pub status: TaskStatus,
    pub created_at_ms: u64,
    pub items: usize,
    pub chunks: usize,
    pub sessions_open: usize,
    pub sessions_submitted: usize,
    pub sessions_rejected: usize,
    pub replicas_submitted: usize,
    pub replicas_required: usize,
    pub last_seq: u64,
}

struct TaskSlot {
    state: TaskState,
    writer: LogWriter,
    since_snapshot: u64,
}

impl TaskSlot {
    fn dir(&self) -> &Path {
        self.writer.path().parent().expect("log lives in a task directory")
    }

    fn append(&mut self, event: Event, clock: &dyn Clock, config: &ServiceConfig) -> Result<()> {
        let entry = LogEntry {
            seq: self.state.last_seq + 1,
            at_ms: clock.now_ms(),
            event,
        };
        self.writer.append(&entry)?;
        self.state.apply(&entry)?;
        self.since_snapshot += 1;
        if config.snapshot_every > 0 && self.since_snapshot >= config.snapshot_every {
            self.snapshot()?;
        }
        Ok(())
    }

    fn snapshot(&mut self) -> Result<()> {
        let dir = self.dir().to_path_buf();
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        fs::write(&tmp, self.state.snapshot_bytes()?)?;
        fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
        self.since_snapshot = 0;
        Ok(())
    }
}

/// Task hosting over per-task append-only logs.
///
/// Mutations of one task are serialized by that task's mutex, which also
/// guards its log appender; different tasks proceed in parallel.
pub struct Service {
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    tasks: RwLock<BTreeMap<TaskId, Arc<Mutex<TaskSlot>>>>,
    qualified: RwLock<BTreeSet<WorkerId>>,
    creating: Mutex<()>,
}

impl Service {
    /// Opens the data directory and replays every task found in it.
    pub fn open(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        fs::create_dir_all(&config.data_dir)?;
        let mut dirs: Vec<PathBuf> = fs::read_dir(&config.data_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(LOG_FILE).is_file())
            .collect();
        dirs.sort();

        let mut tasks = BTreeMap::new();
        let mut qualified = BTreeSet::new();
        for dir in dirs {
            let state = load_task(&dir)?;
            if state.config.kind == TaskKind::Qualification {
                qualified.extend(passed_workers(&state));
            }
            let writer = LogWriter::open(dir.join(LOG_FILE), config.sync)?;
            tasks.insert(
                state.task_id.clone(),
                Arc::new(Mutex::new(TaskSlot {
                    state,
                    writer,
                    since_snapshot: 0,
                })),
            );
        }
        Ok(Self {
            config,
            clock,
            tasks: RwLock::new(tasks),
            qualified: RwLock::new(qualified),
            creating: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn slot(&self, task_id: &TaskId) -> Result<Arc<Mutex<TaskSlot>>> {
        self.tasks
            .read()
            .get(task_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownTask(task_id.to_string()))
    }

    fn session_slot(&self, session_id: &SessionId) -> Result<Arc<Mutex<TaskSlot>>> {
        let unknown = || ServiceError::UnknownSession(session_id.to_string());
        let (task, _) = session_id.as_str().rsplit_once(".s").ok_or_else(unknown)?;
        self.slot(&TaskId::new(task)).map_err(|_| unknown())
    }

    pub fn task_ids(&self) -> Vec<TaskId> {
        self.tasks.read().keys().cloned().collect()
    }

    pub fn is_qualified(&self, worker: &WorkerId) -> bool {
        self.qualified.read().contains(worker)
    }

    pub fn create_task(&self, items: Vec<Item>, config: TaskConfig) -> Result<CreateOutcome> {
        let report = match validate_task(&items, &config) {
            Ok(r) => r,
            Err(e) => {
                return Err(ServiceError::Validation {
                    violations: vec![e.to_string()],
                })
            }
        };
        if !report.is_valid() {
            return Err(ServiceError::Validation {
                violations: report.violations,
            });
        }

        let hash = hex::encode(Sha256::digest(serde_json::to_vec(&(&items, &config))?));
        let task_id = TaskId::new(format!("t{}", &hash[..16]));

        let _guard = self.creating.lock();
        if let Some(slot) = self.tasks.read().get(&task_id) {
            if slot.lock().state.content_hash != hash {
                return Err(ServiceError::Validation {
                    violations: vec![format!("task id {task_id} already names a different task")],
                });
            }
            return Ok(CreateOutcome {
                task_id,
                created: false,
            });
        }

        let dir = self.config.data_dir.join(task_id.as_str());
        fs::create_dir_all(&dir)?;
        let mut writer = LogWriter::open(dir.join(LOG_FILE), self.config.sync)?;
        let entry = LogEntry {
            seq: 1,
            at_ms: self.clock.now_ms(),
            event: Event::TaskCreated {
                task_id: task_id.clone(),
                content_hash: hash,
                items,
                config,
            },
        };
        writer.append(&entry)?;
        let state = TaskState::from_created(&entry)?;
        self.tasks.write().insert(
            task_id.clone(),
            Arc::new(Mutex::new(TaskSlot {
                state,
                writer,
                since_snapshot: 1,
            })),
        );
        Ok(CreateOutcome {
            task_id,
            created: true,
        })
    }

    pub fn state(&self, task_id: &TaskId) -> Result<TaskState> {
        Ok(self.slot(task_id)?.lock().state.clone())
    }

    pub fn snapshot_bytes(&self, task_id: &TaskId) -> Result<Vec<u8>> {
        self.slot(task_id)?.lock().state.snapshot_bytes()
    }

    /// Writes a snapshot of one task now, regardless of the schedule.
    pub fn write_snapshot(&self, task_id: &TaskId) -> Result<()> {
        self.slot(task_id)?.lock().snapshot()
    }

    pub fn summary(&self, task_id: &TaskId) -> Result<TaskSummary> {
        let slot = self.slot(task_id)?;
        let guard = slot.lock();
        let s = &guard.state;
        let count = |st: SessionState| s.sessions.values().filter(|x| x.state == st).count();
        Ok(TaskSummary {
            task_id: s.task_id.clone(),
            kind: s.config.kind,
            status: s.status,
            created_at_ms: s.created_at_ms,
            items: s.items.len(),
            chunks: s.chunks(),
            sessions_open: count(SessionState::Open),
            sessions_submitted: count(SessionState::Submitted),
            sessions_rejected: count(SessionState::Rejected),
            replicas_submitted: s.submitted_replicas(),
            replicas_required: s.required_replicas(),
            last_seq: s.last_seq,
        })
    }

    pub fn open_session(&self, task_id: &TaskId, worker: &WorkerId) -> Result<SessionGrant> {
        let slot = self.slot(task_id)?;
        let mut guard = slot.lock();
        let kind = guard.state.config.kind;
        if kind == TaskKind::Labeling
            && self.config.require_qualification
            && !self.is_qualified(worker)
        {
            return Err(ServiceError::QualificationRequired);
        }
        if guard.state.status == TaskStatus::Complete {
            return Err(ServiceError::TaskClosed(TaskStatus::Complete.as_str()));
        }
        let (chunk, replica) = guard
            .state
            .next_assignment(worker)
            .ok_or(ServiceError::FullyAssigned)?;
        let session_id = SessionId::new(format!("{task_id}.s{}", guard.state.sessions.len()));
        guard.append(
            Event::SessionOpened {
                session_id: session_id.clone(),
                worker_id: worker.clone(),
                chunk,
                replica,
            },
            self.clock.as_ref(),
            &self.config,
        )?;
        let manifest = Manifest::build(&guard.state, &guard.state.sessions[&session_id])?;
        Ok(SessionGrant {
            session_id,
            manifest,
        })
    }

    pub fn manifest(&self, session_id: &SessionId) -> Result<Manifest> {
        let slot = self.session_slot(session_id)?;
        let guard = slot.lock();
        let record = guard
            .state
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))?;
        Manifest::build(&guard.state, record)
    }

    pub fn submit_events(&self, session_id: &SessionId, batch: EventBatch) -> Result<SubmitOutcome> {
        if batch.schema_version != SCHEMA_VERSION {
            return Err(ServiceError::Malformed(format!(
                "unsupported schema_version {}",
                batch.schema_version
            )));
        }
        let slot = self.session_slot(session_id)?;
        let mut guard = slot.lock();
        let record = guard
            .state
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))?;

        if record.state != SessionState::Open {
            if batch.idempotency_key.is_some() && batch.idempotency_key == record.idempotency_key {
                return Ok(SubmitOutcome::of(record));
            }
            return Err(match record.state {
                SessionState::Submitted => ServiceError::DuplicateSubmission(session_id.to_string()),
                _ => ServiceError::SessionClosed(session_id.to_string()),
            });
        }
        if guard.state.status == TaskStatus::Complete {
            return Err(ServiceError::TaskClosed(TaskStatus::Complete.as_str()));
        }

        let mut session = guard.state.worker_session(record)?;
        session.events = batch.events;
        session.actual_onsets_ms = batch.actual_onsets_ms;
        session
            .check(guard.state.config.lookback_ms)
            .map_err(|e| ServiceError::Malformed(e.to_string()))?;

        let event = match guard.state.config.kind {
            TaskKind::Qualification => {
                let result = qualify(&session, QUALIFICATION_WINDOW_MS)?;
                if result.passed {
                    self.qualified.write().insert(session.worker_id.clone());
                }
                Event::EventsSubmitted {
                    session_id: session_id.clone(),
                    idempotency_key: batch.idempotency_key,
                    events: session.events,
                    actual_onsets_ms: session.actual_onsets_ms,
                    qualification: Some(result),
                }
            }
            TaskKind::Labeling => {
                let has_gold = session.stream.slots.iter().any(|s| s.is_gold_positive());
                if has_gold && matched_delays(&session, guard.state.config.lookback_ms).is_empty() {
                    Event::SessionRejected {
                        session_id: session_id.clone(),
                        idempotency_key: batch.idempotency_key,
                        events: session.events,
                        reason: "no keypresses on gold positives".into(),
                    }
                } else {
                    Event::EventsSubmitted {
                        session_id: session_id.clone(),
                        idempotency_key: batch.idempotency_key,
                        events: session.events,
                        actual_onsets_ms: session.actual_onsets_ms,
                        qualification: None,
                    }
                }
            }
        };
        guard.append(event, self.clock.as_ref(), &self.config)?;
        Ok(SubmitOutcome::of(&guard.state.sessions[session_id]))
    }

    /// Decodes a labeling task. The same request twice returns the stored
    /// result without decoding again.
    pub fn decode_task(&self, task_id: &TaskId, request: DecodeRequest) -> Result<DecodeResult> {
        let slot = self.slot(task_id)?;
        let mut guard = slot.lock();
        if guard.state.config.kind == TaskKind::Qualification {
            return Err(ServiceError::NotDecodable(
                "qualification tasks are scored per session, not decoded".into(),
            ));
        }
        if let Some(done) = &guard.state.decode {
            if done.request == request {
                return Ok(done.result.clone());
            }
        }

        let submitted = guard.state.submitted_replicas();
        let required = guard.state.required_replicas();
        if submitted == 0 || (submitted < required && !request.force) {
            return Err(ServiceError::InsufficientSessions {
                submitted,
                required,
            });
        }
        let options = request.overrides.options(&guard.state.config)?;
        let sessions = guard
            .state
            .sessions
            .values()
            .filter(|s| s.state == SessionState::Submitted)
            .map(|s| guard.state.worker_session(s))
            .collect::<Result<Vec<_>>>()?;

        let before = guard.state.status;
        guard.state.status = TaskStatus::Decoding;
        let mut result = match decode(&guard.state.items, &sessions, &options) {
            Ok(r) => r,
            Err(e) => {
                guard.state.status = before;
                return Err(e.into());
            }
        };
        if submitted < required {
            result.flags.push("reduced redundancy".into());
        }
        let appended = guard.append(
            Event::DecodeCompleted {
                request,
                result: result.clone(),
            },
            self.clock.as_ref(),
            &self.config,
        );
        if let Err(e) = appended {
            guard.state.status = before;
            return Err(e);
        }
        Ok(result)
    }

    pub fn results(&self, task_id: &TaskId) -> Result<DecodeResult> {
        let slot = self.slot(task_id)?;
        let guard = slot.lock();
        guard
            .state
            .decode
            .as_ref()
            .map(|d| d.result.clone())
            .ok_or_else(|| ServiceError::NoResults(task_id.to_string()))
    }

    /// Opens a qualification session on `task_id`, or on the most recently
    /// created qualification task.
    pub fn start_qualification(
        &self,
        worker: &WorkerId,
        task_id: Option<&TaskId>,
    ) -> Result<SessionGrant> {
        let task_id = match task_id {
            Some(t) => {
                if self.slot(t)?.lock().state.config.kind != TaskKind::Qualification {
                    return Err(ServiceError::NotDecodable(format!(
                        "task {t} is not a qualification task"
                    )));
                }
                t.clone()
            }
            None => self
                .tasks
                .read()
                .values()
                .filter_map(|slot| {
                    let g = slot.lock();
                    (g.state.config.kind == TaskKind::Qualification)
                        .then(|| (g.state.created_at_ms, g.state.task_id.clone()))
                })
                .max()
                .map(|(_, id)| id)
                .ok_or(ServiceError::NoQualificationTask)?,
        };
        self.open_session(&task_id, worker)
    }

    /// Submits a qualification attempt and returns its verdict.
    pub fn submit_qualification(
        &self,
        session_id: &SessionId,
        batch: EventBatch,
    ) -> Result<SubmitOutcome> {
        let slot = self.session_slot(session_id)?;
        if slot.lock().state.config.kind != TaskKind::Qualification {
            return Err(ServiceError::Malformed(format!(
                "session {session_id} is not a qualification session"
            )));
        }
        drop(slot);
        self.submit_events(session_id, batch)
    }
}

fn passed_workers(state: &TaskState) -> impl Iterator<Item = WorkerId> + '_ {
    state
        .sessions
        .values()
        .filter(|s| s.qualification.as_ref().is_some_and(|q| q.passed))
        .map(|s| s.worker_id.clone())
}

/// Rebuilds one task from its snapshot (if any) and log.
pub(crate) fn load_task(dir: &Path) -> Result<TaskState> {
    let entries = read_log(&dir.join(LOG_FILE))?;
    let snapshot_path = dir.join(SNAPSHOT_FILE);
    let mut state = if snapshot_path.is_file() {
        serde_json::from_slice::<TaskState>(&fs::read(&snapshot_path)?)?
    } else {
        let first = entries
            .first()
            .ok_or_else(|| ServiceError::Replay(format!("{} is empty", dir.display())))?;
        TaskState::from_created(first)?
    };
    let log_end = entries.last().map_or(0, |e| e.seq);
    if state.last_seq > log_end {
        return Err(ServiceError::Replay(format!(
            "snapshot at seq {} is ahead of the log (seq {log_end})",
            state.last_seq
        )));
    }
    let start = state.last_seq;
    for entry in entries.iter().filter(|e| e.seq > start) {
        state.apply(entry)?;
    }
    Ok(state)
}

/// Rebuilds a task from its log alone, ignoring any snapshot.
pub fn replay_log(log_path: &Path) -> Result<TaskState> {
    let entries = read_log(log_path)?;
    let (first, rest) = entries
        .split_first()
        .ok_or_else(|| ServiceError::Replay(format!("{} is empty", log_path.display())))?;
    let mut state = TaskState::from_created(first)?;
    for entry in rest {
        state.apply(entry)?;
    }
    Ok(state)
}
