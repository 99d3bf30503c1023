//! Domain types shared by every stage of a rapid labeling task.
//!
//! All timestamps are milliseconds relative to the onset of the first item
//! after the countdown. The countdown itself never appears on the decode
//! timeline.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::StreamSchedule;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Opaque item identifier, unique within a task.
    ItemId
);
string_id!(WorkerId);
string_id!(SessionId);
string_id!(TaskId);

/// Minimum display interval accepted by [`validate_task`].
pub const MIN_DISPLAY_INTERVAL_MS: u32 = 50;

/// Expected positives may not arrive more often than once per this many ms.
pub const MIN_POSITIVE_SPACING_MS: f64 = 400.0;

/// Mean keypress delay after a positive item, in ms.
pub const DEFAULT_DELAY_MEAN_MS: f64 = 378.0;
/// Standard deviation of the keypress delay, in ms.
pub const DEFAULT_DELAY_STD_MS: f64 = 92.0;

/// Lookback window covering `mean + 4 std` of the default delay model.
pub const DEFAULT_LOOKBACK_MS: f64 = DEFAULT_DELAY_MEAN_MS + 4.0 * DEFAULT_DELAY_STD_MS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Text,
    WordPair,
    Article,
    Other,
}

/// Reference to the content shown for an item. Opaque to everything but the player.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub modality: Modality,
    pub reference: String,
}

impl Payload {
    pub fn image(uri: impl Into<String>) -> Self {
        Self {
            modality: Modality::Image,
            reference: uri.into(),
        }
    }

    pub fn text(body: impl Into<String>) -> Self {
        Self {
            modality: Modality::Text,
            reference: body.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: ItemId,
    pub payload: Payload,
    /// Prior probability that the item is positive.
    pub prior: f64,
    /// Known ground truth. Items carrying a label form the gold pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<bool>,
}

impl Item {
    pub fn new(id: impl Into<ItemId>, payload: Payload, prior: f64) -> Self {
        Self {
            item_id: id.into(),
            payload,
            prior,
            gold_label: None,
        }
    }

    pub fn gold(id: impl Into<ItemId>, payload: Payload, prior: f64, label: bool) -> Self {
        Self {
            item_id: id.into(),
            payload,
            prior,
            gold_label: Some(label),
        }
    }

    pub fn is_gold(&self) -> bool {
        self.gold_label.is_some()
    }
}

/// How the decision threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSetting {
    Fixed(f64),
    /// Tune on gold items to reach the given precision.
    Auto {
        target_precision: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Real items streamed with gold items mixed in.
    #[default]
    Labeling,
    /// Gold-only streams used to admit workers.
    Qualification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    #[serde(default)]
    pub kind: TaskKind,
    /// Time each item stays on screen.
    pub display_interval_ms: u32,
    /// Number of workers who see each chunk.
    pub redundancy: u32,
    pub threshold: ThresholdSetting,
    pub stream_length: usize,
    pub gold_fraction: f64,
    /// Upper bound on the mean prior, i.e. the expected share of positives.
    pub target_positive_rate_cap: f64,
    pub lookback_ms: f64,
    pub rng_seed: u64,
    /// Prior assigned to items that arrive without one.
    pub default_prior: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Labeling,
            display_interval_ms: 100,
            redundancy: 5,
            threshold: ThresholdSetting::Auto {
                target_precision: 0.97,
            },
            stream_length: 100,
            gold_fraction: 0.05,
            target_positive_rate_cap: 1.0,
            lookback_ms: DEFAULT_LOOKBACK_MS,
            rng_seed: 0,
            default_prior: 0.05,
        }
    }
}

impl TaskConfig {
    /// Qualification stream: 200 gold items shown at 100ms.
    pub fn qualification() -> Self {
        Self {
            kind: TaskKind::Qualification,
            stream_length: 200,
            redundancy: 1,
            gold_fraction: 0.0,
            ..Self::default()
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.display_interval_ms < MIN_DISPLAY_INTERVAL_MS {
            out.push(format!(
                "display_interval_ms {} below minimum {MIN_DISPLAY_INTERVAL_MS}",
                self.display_interval_ms
            ));
        }
        if self.redundancy == 0 {
            out.push("redundancy must be positive".into());
        }
        if self.stream_length == 0 {
            out.push("stream_length must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.gold_fraction) {
            out.push(format!(
                "gold_fraction {} outside [0, 1)",
                self.gold_fraction
            ));
        }
        if !(self.target_positive_rate_cap > 0.0 && self.target_positive_rate_cap <= 1.0) {
            out.push(format!(
                "target_positive_rate_cap {} outside (0, 1]",
                self.target_positive_rate_cap
            ));
        }
        if !(self.lookback_ms >= self.display_interval_ms as f64) {
            out.push(format!(
                "lookback_ms {} shorter than display interval {}",
                self.lookback_ms, self.display_interval_ms
            ));
        }
        if !(0.0..=1.0).contains(&self.default_prior) {
            out.push(format!(
                "default_prior {} outside [0, 1]",
                self.default_prior
            ));
        }
        match self.threshold {
            ThresholdSetting::Fixed(t) if !(0.0..=1.0).contains(&t) => {
                out.push(format!("threshold {t} outside [0, 1]"))
            }
            ThresholdSetting::Auto { target_precision }
                if !(target_precision > 0.0 && target_precision <= 1.0) =>
            {
                out.push(format!(
                    "target precision {target_precision} outside (0, 1]"
                ))
            }
            _ => {}
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "worker_id", rename_all = "snake_case")]
pub enum DelayScope {
    Global,
    Worker(WorkerId),
}

/// Gaussian model of the delay between a positive item's onset and the keypress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub scope: DelayScope,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            mean_ms: DEFAULT_DELAY_MEAN_MS,
            std_ms: DEFAULT_DELAY_STD_MS,
            scope: DelayScope::Global,
        }
    }
}

impl DelayModel {
    pub const MEAN_BOUNDS_MS: (f64, f64) = (100.0, 2000.0);

    pub fn new(mean_ms: f64, std_ms: f64) -> Result<Self> {
        let model = Self {
            mean_ms,
            std_ms,
            scope: DelayScope::Global,
        };
        model.check()?;
        Ok(model)
    }

    pub fn with_scope(mut self, scope: DelayScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn check(&self) -> Result<()> {
        if !(self.std_ms > 0.0) || !self.std_ms.is_finite() {
            return Err(Error::InvalidDelayModel(format!(
                "std_ms must be positive, got {}",
                self.std_ms
            )));
        }
        let (lo, hi) = Self::MEAN_BOUNDS_MS;
        if !(lo..=hi).contains(&self.mean_ms) {
            return Err(Error::InvalidDelayModel(format!(
                "mean_ms {} outside [{lo}, {hi}]",
                self.mean_ms
            )));
        }
        Ok(())
    }

    /// Density of observing `delay_ms` under this model.
    pub fn pdf(&self, delay_ms: f64) -> f64 {
        let z = (delay_ms - self.mean_ms) / self.std_ms;
        (-0.5 * z * z).exp() / (self.std_ms * (2.0 * std::f64::consts::PI).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypressSource {
    #[default]
    Human,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypressEvent {
    pub t_ms: f64,
    #[serde(default)]
    pub source: KeypressSource,
}

impl KeypressEvent {
    pub fn human(t_ms: f64) -> Self {
        Self {
            t_ms,
            source: KeypressSource::Human,
        }
    }

    pub fn simulated(t_ms: f64) -> Self {
        Self {
            t_ms,
            source: KeypressSource::Simulated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    #[default]
    Pending,
    Submitted,
    Rejected,
}

/// One worker's pass over one stream, with the keypresses they produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSession {
    pub session_id: SessionId,
    pub worker_id: WorkerId,
    pub task_id: TaskId,
    pub stream: StreamSchedule,
    pub events: Vec<KeypressEvent>,
    #[serde(default)]
    pub status: SessionStatus,
    /// Onsets measured by the client, one per slot. Used instead of the
    /// scheduled onsets when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_onsets_ms: Option<Vec<f64>>,
}

impl WorkerSession {
    /// Onset of each slot, preferring client-measured onsets.
    pub fn onsets(&self) -> Vec<f64> {
        match &self.actual_onsets_ms {
            Some(actual) if actual.len() == self.stream.slots.len() => actual.clone(),
            _ => self.stream.slots.iter().map(|s| s.onset_ms).collect(),
        }
    }

    /// Checks event ordering and bounds against `stream end + lookback_ms`.
    pub fn check(&self, lookback_ms: f64) -> Result<()> {
        let end = self.stream.duration_ms() + lookback_ms;
        for (i, ev) in self.events.iter().enumerate() {
            if !ev.t_ms.is_finite() || ev.t_ms < 0.0 || ev.t_ms > end {
                return Err(Error::MalformedSession(format!(
                    "event {i} at {}ms outside [0, {end}]",
                    ev.t_ms
                )));
            }
            if i > 0 && self.events[i - 1].t_ms > ev.t_ms {
                return Err(Error::MalformedSession(format!("event {i} out of order")));
            }
        }
        if let Some(actual) = &self.actual_onsets_ms {
            if actual.len() != self.stream.slots.len() {
                return Err(Error::MalformedSession(format!(
                    "{} actual onsets for {} slots",
                    actual.len(),
                    self.stream.slots.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Positive,
    Negative,
    Undecided,
}

impl Decision {
    /// Ties at the threshold are positive.
    pub fn from_threshold(posterior: f64, threshold: f64) -> Self {
        if posterior >= threshold {
            Decision::Positive
        } else {
            Decision::Negative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEstimate {
    pub item_id: ItemId,
    pub prior: f64,
    /// Prior times the mean per-worker attribution mass.
    pub score: f64,
    /// Score divided by the largest score of the decode.
    pub posterior: f64,
    pub decision: Decision,
    /// Number of sessions that displayed the item.
    pub coverage: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(self.violations.join("; ")))
        }
    }
}

/// Checks items and configuration before any stream is built.
pub fn validate_task(items: &[Item], config: &TaskConfig) -> Result<ValidationReport> {
    if items.is_empty() {
        return Err(Error::NoItems);
    }
    let mut violations = config.violations();

    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(&item.item_id) {
            violations.push(format!("duplicate id {}", item.item_id));
        }
        if !(0.0..=1.0).contains(&item.prior) {
            violations.push(format!(
                "prior {} of item {} outside [0, 1]",
                item.prior, item.item_id
            ));
        }
    }

    let (gold, real): (Vec<&Item>, Vec<&Item>) = items.iter().partition(|i| i.is_gold());
    let streamed: Vec<&Item> = match config.kind {
        TaskKind::Labeling => real,
        TaskKind::Qualification => gold.clone(),
    };

    if streamed.is_empty() {
        violations.push(match config.kind {
            TaskKind::Labeling => "no non-gold items to label".to_string(),
            TaskKind::Qualification => "qualification task has no gold items".to_string(),
        });
    } else {
        let expected_positives: f64 = streamed.iter().map(|i| i.prior.clamp(0.0, 1.0)).sum();
        let duration_ms = streamed.len() as f64 * config.display_interval_ms as f64;
        if expected_positives > 0.0 {
            let spacing = duration_ms / expected_positives;
            if spacing < MIN_POSITIVE_SPACING_MS {
                violations.push(format!(
                    "expected positive rate too high: one positive per {spacing:.0}ms, \
                     need at least {MIN_POSITIVE_SPACING_MS:.0}ms"
                ));
            }
        }
        let mean_prior = expected_positives / streamed.len() as f64;
        if mean_prior > config.target_positive_rate_cap {
            violations.push(format!(
                "expected positive fraction {mean_prior:.3} exceeds cap {}",
                config.target_positive_rate_cap
            ));
        }
    }

    match config.kind {
        TaskKind::Labeling if config.gold_fraction > 0.0 => {
            if gold.is_empty() {
                violations.push("gold budget shortfall: gold pool is empty".into());
            }
            if config.gold_fraction * (config.stream_length as f64) < 1.0 {
                violations.push(format!(
                    "gold budget shortfall: gold_fraction {} x stream_length {} < 1",
                    config.gold_fraction, config.stream_length
                ));
            }
        }
        TaskKind::Qualification => {
            if !gold.iter().any(|i| i.gold_label == Some(true)) {
                violations.push("gold budget shortfall: no gold positives".into());
            }
        }
        _ => {}
    }

    Ok(ValidationReport { violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize, prior: f64) -> Vec<Item> {
        (0..n)
            .map(|i| {
                Item::new(
                    format!("i{i}"),
                    Payload::image(format!("img/{i}.jpg")),
                    prior,
                )
            })
            .collect()
    }

    fn config(delta: u32) -> TaskConfig {
        TaskConfig {
            display_interval_ms: delta,
            gold_fraction: 0.0,
            ..TaskConfig::default()
        }
    }

    #[test]
    fn sparse_positives_are_valid() {
        let report = validate_task(&items(100, 0.05), &config(100)).unwrap();
        assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn dense_positives_are_flagged() {
        let report = validate_task(&items(100, 0.5), &config(100)).unwrap();
        assert!(!report.is_valid());
        assert!(report.violations[0].contains("positive rate"));
    }

    #[test]
    fn duplicate_ids_are_flagged() {
        let mut its = items(10, 0.05);
        its[3].item_id = its[0].item_id.clone();
        let report = validate_task(&its, &config(500)).unwrap();
        assert!(report.violations.iter().any(|v| v.contains("duplicate id")));
    }

    #[test]
    fn empty_item_list_errors() {
        assert!(matches!(
            validate_task(&[], &config(100)),
            Err(Error::NoItems)
        ));
    }

    #[test]
    fn config_bounds() {
        let mut cfg = config(10);
        cfg.lookback_ms = 5.0;
        let report = validate_task(&items(5, 0.01), &cfg).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("display_interval_ms")));
        assert!(report.violations.iter().any(|v| v.contains("lookback_ms")));
    }

    #[test]
    fn prior_out_of_range() {
        let mut its = items(10, 0.01);
        its[2].prior = 1.5;
        let report = validate_task(&its, &config(500)).unwrap();
        assert!(report.violations.iter().any(|v| v.contains("prior 1.5")));
    }

    #[test]
    fn gold_shortfall() {
        let mut cfg = config(100);
        cfg.gold_fraction = 0.05;
        let report = validate_task(&items(100, 0.05), &cfg).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("gold pool is empty")));

        cfg.stream_length = 10;
        let mut its = items(100, 0.05);
        its.push(Item::gold("g0", Payload::image("g0"), 1.0, true));
        let report = validate_task(&its, &cfg).unwrap();
        assert!(report.violations.iter().any(|v| v.contains("< 1")));
    }

    #[test]
    fn pdf_peaks_at_mean() {
        let m = DelayModel::default();
        assert!(m.pdf(378.0) > m.pdf(300.0));
        assert!((m.pdf(378.0 + 50.0) - m.pdf(378.0 - 50.0)).abs() < 1e-15);
    }

    #[test]
    fn delay_model_bounds() {
        assert!(DelayModel::new(378.0, 0.0).is_err());
        assert!(DelayModel::new(50.0, 10.0).is_err());
        assert!(DelayModel::new(378.0, 92.0).is_ok());
    }

    #[test]
    fn threshold_setting_serde() {
        let fixed: ThresholdSetting = serde_json::from_str("0.4").unwrap();
        assert_eq!(fixed, ThresholdSetting::Fixed(0.4));
        let auto: ThresholdSetting = serde_json::from_str(r#"{"target_precision":0.97}"#).unwrap();
        assert_eq!(
            auto,
            ThresholdSetting::Auto {
                target_precision: 0.97
            }
        );
    }
}
