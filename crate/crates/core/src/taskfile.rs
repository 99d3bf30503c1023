//! Line-delimited JSON task and session files.
//!
//! A task file is UTF-8 with one JSON object per line, each tagged by a
//! `record` field:
//!
//! ```text
//! {"record":"header","schema_version":1}
//! {"record":"config","display_interval_ms":100,"redundancy":5,...}
//! {"record":"item","item_id":"img-001","payload":{"modality":"image","reference":"s3://..."},"prior":0.05}
//! {"record":"item","item_id":"gold-01","payload":{...},"prior":0.05,"gold_label":true}
//! {"record":"item","item_id":"img-002","payload":{...},"truth":false,"class_priors":{"cat":0.7,"dog":0.3}}
//! {"record":"schedule","chunk":0,"replica":0,"slots":[...],...}
//! ```
//!
//! Exactly one `config` record is required. An item without `prior` gets
//! `config.default_prior`. `truth` holds a hidden label used only by the
//! simulator and evaluation; `class_priors` and `class` feed the cascade.
//! Blank lines and lines starting with `#` are skipped.
//!
//! A sessions file holds one serialized `WorkerSession` per line.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cascade::ClassId;
use crate::error::{Error, Result};
use crate::model::{Item, ItemId, Payload, TaskConfig, WorkerSession};
use crate::scheduler::StreamSchedule;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: ItemId,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub class_priors: BTreeMap<ClassId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Header { schema_version: u32 },
    Config(TaskConfig),
    Item(ItemRecord),
    Schedule(StreamSchedule),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskFile {
    pub config: TaskConfig,
    pub items: Vec<Item>,
    /// Hidden labels of non-gold items.
    pub truth: BTreeMap<ItemId, bool>,
    pub classes: BTreeMap<ItemId, ClassId>,
    pub class_priors: BTreeMap<ItemId, BTreeMap<ClassId, f64>>,
    pub schedules: Vec<StreamSchedule>,
}

impl TaskFile {
    pub fn new(config: TaskConfig, items: Vec<Item>) -> Self {
        Self {
            config,
            items,
            ..Self::default()
        }
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut config = None;
        let mut records = Vec::new();
        let mut schedules = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::TaskFile {
                line: n + 1,
                message,
            };
            match serde_json::from_str::<Record>(trimmed).map_err(|e| err(e.to_string()))? {
                Record::Header { schema_version } if schema_version != SCHEMA_VERSION => {
                    return Err(err(format!("unsupported schema_version {schema_version}")));
                }
                Record::Header { .. } => {}
                Record::Config(c) => {
                    if config.replace(c).is_some() {
                        return Err(err("more than one config record".into()));
                    }
                }
                Record::Item(r) => records.push(r),
                Record::Schedule(s) => schedules.push(s),
            }
        }
        let config = config.ok_or_else(|| Error::TaskFile {
            line: 0,
            message: "missing config record".into(),
        })?;

        let mut file = TaskFile {
            schedules,
            ..TaskFile::new(config, Vec::new())
        };
        for r in records {
            if let Some(t) = r.truth {
                file.truth.insert(r.item_id.clone(), t);
            }
            if let Some(c) = r.class {
                file.classes.insert(r.item_id.clone(), c);
            }
            if !r.class_priors.is_empty() {
                file.class_priors.insert(r.item_id.clone(), r.class_priors);
            }
            file.items.push(Item {
                item_id: r.item_id,
                payload: r.payload,
                prior: r.prior.unwrap_or(file.config.default_prior),
                gold_label: r.gold_label,
            });
        }
        Ok(file)
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        let mut line = |r: &Record| -> Result<()> {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
            Ok(())
        };
        line(&Record::Header {
            schema_version: SCHEMA_VERSION,
        })?;
        line(&Record::Config(self.config.clone()))?;
        for item in &self.items {
            line(&Record::Item(ItemRecord {
                item_id: item.item_id.clone(),
                payload: item.payload.clone(),
                prior: Some(item.prior),
                gold_label: item.gold_label,
                truth: self.truth.get(&item.item_id).copied(),
                class: self.classes.get(&item.item_id).cloned(),
                class_priors: self
                    .class_priors
                    .get(&item.item_id)
                    .cloned()
                    .unwrap_or_default(),
            }))?;
        }
        for s in &self.schedules {
            line(&Record::Schedule(s.clone()))?;
        }
        Ok(())
    }

    /// Truth for every item: hidden labels plus gold labels.
    pub fn full_truth(&self) -> BTreeMap<ItemId, bool> {
        let mut t = self.truth.clone();
        for item in &self.items {
            if let Some(l) = item.gold_label {
                t.insert(item.item_id.clone(), l);
            }
        }
        t
    }
}

pub fn read_sessions(reader: impl BufRead) -> Result<Vec<WorkerSession>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::TaskFile {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_sessions(sessions: &[WorkerSession], mut out: impl Write) -> Result<()> {
    for s in sessions {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
