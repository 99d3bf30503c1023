//! Append-only JSONL event log, one file per task.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rapidlabel_core::decoder::{DecodeResult, QualificationResult};
use rapidlabel_core::{Item, KeypressEvent, SessionId, TaskConfig, TaskId, WorkerId};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::state::DecodeRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at_ms: u64,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Event {
    TaskCreated {
        task_id: TaskId,
        content_hash: String,
        items: Vec<Item>,
        config: TaskConfig,
    },
    SessionOpened {
        session_id: SessionId,
        worker_id: WorkerId,
        chunk: usize,
        replica: usize,
    },
    EventsSubmitted {
        session_id: SessionId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
        events: Vec<KeypressEvent>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        actual_onsets_ms: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        qualification: Option<QualificationResult>,
    },
    SessionRejected {
        session_id: SessionId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
        events: Vec<KeypressEvent>,
        reason: String,
    },
    DecodeCompleted {
        request: DecodeRequest,
        result: DecodeResult,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::TaskCreated { .. } => "task-created",
            Event::SessionOpened { .. } => "session-opened",
            Event::EventsSubmitted { .. } => "events-submitted",
            Event::SessionRejected { .. } => "session-rejected",
            Event::DecodeCompleted { .. } => "decode-completed",
        }
    }
}

#[derive(Debug)]
pub struct LogWriter {
    file: File,
    path: PathBuf,
    sync: bool,
}

impl LogWriter {
    pub fn open(path: impl Into<PathBuf>, sync: bool) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { file, path, sync })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one entry as a single line. Returns the bytes written.
    pub fn append(&mut self, entry: &LogEntry) -> Result<usize> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(line.len())
    }
}

/// Reads every entry of a log.
///
/// A final line without its newline is the remains of an interrupted append;
/// it is cut off the file and ignored. Any other unreadable line is an error.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;

    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if complete < bytes.len() {
        OpenOptions::new()
            .write(true)
            .open(path)?
            .set_len(complete as u64)?;
    }

    let mut out = Vec::new();
    for (n, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let entry: LogEntry = serde_json::from_slice(line).map_err(|e| ServiceError::CorruptLog {
            path: path.display().to_string(),
            message: format!("line {}: {e}", n + 1),
        })?;
        out.push(entry);
    }
    Ok(out)
}
