//! Metrics, the majority-vote baseline and worker-time accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ItemId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Nothing was predicted positive; precision is reported as 1.0.
    pub no_predicted_positives: bool,
}

/// Scores binary decisions against ground truth.
pub fn precision_recall(
    decisions: &BTreeMap<ItemId, bool>,
    truth: &BTreeMap<ItemId, bool>,
) -> Result<PrecisionRecall> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (item, &predicted) in decisions {
        let actual = *truth
            .get(item)
            .ok_or_else(|| Error::MissingTruth(item.clone()))?;
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let no_predicted_positives = tp + fp == 0;
    Ok(PrecisionRecall {
        precision: if no_predicted_positives {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
        recall: if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        },
        tp,
        fp,
        fn_,
        no_predicted_positives,
    })
}

/// Highest recall over thresholds on a ranked list whose precision is at
/// least `min_precision`. `ranked` is ordered most-likely-positive first.
pub fn recall_at_precision(ranked: &[bool], total_positives: usize, min_precision: f64) -> f64 {
    if total_positives == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut best = 0usize;
    for (k, &label) in ranked.iter().enumerate() {
        tp += label as usize;
        if tp as f64 / (k + 1) as f64 >= min_precision {
            best = best.max(tp);
        }
    }
    best as f64 / total_positives as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityVote {
    pub label: bool,
    pub tie: bool,
}

/// Strict majority; an even split is negative and flagged.
pub fn majority_vote(labels: &BTreeMap<ItemId, Vec<bool>>) -> BTreeMap<ItemId, MajorityVote> {
    labels
        .iter()
        .map(|(item, votes)| {
            let yes = votes.iter().filter(|&&v| v).count();
            let no = votes.len() - yes;
            (
                item.clone(),
                MajorityVote {
                    label: yes > no,
                    tie: yes == no,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub conventional_seconds_per_item: f64,
    pub conventional_redundancy: u32,
    /// Display interval in seconds.
    pub rapid_display_seconds: f64,
    pub rapid_redundancy: u32,
}

impl CostModel {
    pub fn new(
        conventional_seconds_per_item: f64,
        conventional_redundancy: u32,
        rapid_display_seconds: f64,
        rapid_redundancy: u32,
    ) -> Result<Self> {
        let cost = Self {
            conventional_seconds_per_item,
            conventional_redundancy,
            rapid_display_seconds,
            rapid_redundancy,
        };
        if !(conventional_seconds_per_item > 0.0 && rapid_display_seconds > 0.0)
            || conventional_redundancy == 0
            || rapid_redundancy == 0
        {
            return Err(Error::InvalidConfig(format!(
                "cost model fields must be positive: {cost:?}"
            )));
        }
        Ok(cost)
    }

    /// Worker-seconds per item, conventional approach.
    pub fn conventional_seconds(&self) -> f64 {
        self.conventional_seconds_per_item * self.conventional_redundancy as f64
    }

    /// Worker-seconds per item, display time only.
    pub fn rapid_seconds(&self) -> f64 {
        self.rapid_display_seconds * self.rapid_redundancy as f64
    }
}

pub fn speedup(cost: &CostModel) -> f64 {
    cost.conventional_seconds() / cost.rapid_seconds()
}

/// Countdown time per stream, excluded from [`speedup`].
pub fn countdown_overhead_seconds(display_interval_ms: u32, streams: usize) -> f64 {
    let frames = crate::scheduler::countdown_frame_count(display_interval_ms);
    frames as f64 * display_interval_ms as f64 / 1000.0 * streams as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ApproachInput {
    pub seconds_per_item: Option<f64>,
    pub redundancy: Option<u32>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl ApproachInput {
    pub fn timing(seconds_per_item: f64, redundancy: u32) -> Self {
        Self {
            seconds_per_item: Some(seconds_per_item),
            redundancy: Some(redundancy),
            ..Self::default()
        }
    }

    pub fn with_scores(mut self, precision: f64, recall: f64) -> Self {
        self.precision = Some(precision);
        self.recall = Some(recall);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Input {
    pub task: String,
    pub conventional: ApproachInput,
    pub rapid: ApproachInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub task: String,
    pub conventional_seconds: f64,
    pub conventional_redundancy: u32,
    pub conventional_precision: f64,
    pub conventional_recall: f64,
    pub rapid_seconds: f64,
    pub rapid_redundancy: u32,
    pub rapid_precision: f64,
    pub rapid_recall: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub header: String,
    pub rows: Vec<Table1Row>,
}

pub const TABLE1_HEADER: &str = "Conventional scores assume a 3-worker majority vote. \
Rapid time counts display time only; countdown overhead is reported separately.";

fn require<T: Copy>(v: Option<T>, task: &str, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::MissingReportInput(format!("{task}: {what}")))
}

pub fn table1_report(inputs: &[Table1Input]) -> Result<Table1Report> {
    if inputs.is_empty() {
        return Err(Error::MissingReportInput("no rows".into()));
    }
    let rows = inputs
        .iter()
        .map(|row| {
            let t = row.task.as_str();
            let c = &row.conventional;
            let r = &row.rapid;
            let cost = CostModel::new(
                require(c.seconds_per_item, t, "conventional time")?,
                require(c.redundancy, t, "conventional redundancy")?,
                require(r.seconds_per_item, t, "rapid time")?,
                require(r.redundancy, t, "rapid redundancy")?,
            )?;
            Ok(Table1Row {
                task: row.task.clone(),
                conventional_seconds: cost.conventional_seconds_per_item,
                conventional_redundancy: cost.conventional_redundancy,
                conventional_precision: require(c.precision, t, "conventional precision")?,
                conventional_recall: require(c.recall, t, "conventional recall")?,
                rapid_seconds: cost.rapid_display_seconds,
                rapid_redundancy: cost.rapid_redundancy,
                rapid_precision: require(r.precision, t, "rapid precision")?,
                rapid_recall: require(r.recall, t, "rapid recall")?,
                speedup: speedup(&cost),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table1Report {
        header: TABLE1_HEADER.into(),
        rows,
    })
}

impl Table1Report {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.header);
        let _ = writeln!(
            out,
            "{:<28} {:>8} {:>6} {:>6} | {:>8} {:>6} {:>6} | {:>8}",
            "task", "conv(s)", "P", "R", "rapid(s)", "P", "R", "speedup"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<28} {:>8.2} {:>6.2} {:>6.2} | {:>8.2} {:>6.2} {:>6.2} | {:>7.2}x",
                r.task,
                r.conventional_seconds,
                r.conventional_precision,
                r.conventional_recall,
                r.rapid_seconds,
                r.rapid_precision,
                r.rapid_recall,
                r.speedup
            );
        }
        out
    }

    /// Tab-separated columns for external plotting.
    pub fn render_tsv(&self) -> String {
        let mut out = String::from(
            "task\tconv_seconds\tconv_redundancy\tconv_precision\tconv_recall\t\
             rapid_seconds\trapid_redundancy\trapid_precision\trapid_recall\tspeedup\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.2}",
                r.task,
                r.conventional_seconds,
                r.conventional_redundancy,
                r.conventional_precision,
                r.conventional_recall,
                r.rapid_seconds,
                r.rapid_redundancy,
                r.rapid_precision,
                r.rapid_recall,
                r.speedup
            );
        }
        out
    }
}

/// Published timings and scores for the binary verification tasks.
pub fn published_table1_inputs() -> Vec<Table1Input> {
    let row = |task: &str, conv: (f64, f64, f64), rapid: (f64, u32, f64, f64)| Table1Input {
        task: task.into(),
        conventional: ApproachInput::timing(conv.0, 3).with_scores(conv.1, conv.2),
        rapid: ApproachInput::timing(rapid.0, rapid.1).with_scores(rapid.2, rapid.3),
    };
    vec![
        row(
            "image verification: easy",
            (1.50, 0.99, 0.99),
            (0.10, 5, 0.99, 0.94),
        ),
        row(
            "image verification: medium",
            (1.70, 0.97, 0.99),
            (0.10, 5, 0.98, 0.83),
        ),
        row(
            "image verification: hard",
            (1.90, 0.93, 0.89),
            (0.10, 5, 0.90, 0.74),
        ),
        row(
            "image verification: all",
            (1.70, 0.97, 0.96),
            (0.10, 5, 0.97, 0.81),
        ),
        row(
            "sentiment analysis",
            (4.25, 0.93, 0.97),
            (0.25, 5, 0.94, 0.84),
        ),
        row("word similarity", (6.23, 0.89, 0.94), (0.60, 5, 0.88, 0.86)),
        row(
            "topic detection",
            (14.33, 0.96, 0.94),
            (2.00, 2, 0.95, 0.81),
        ),
    ]
}

/// Worker-seconds for asking one binary question per (item, class).
pub fn naive_multiclass_seconds(
    items: u64,
    classes: u64,
    seconds_per_label: f64,
    redundancy: u32,
) -> f64 {
    (items * classes) as f64 * seconds_per_label * redundancy as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveCostCheck {
    pub reported_seconds: f64,
    pub stated_redundancy: u32,
    pub seconds_at_stated_redundancy: f64,
    /// Redundancy that reproduces the reported figure, if any integer does.
    pub matching_redundancy: Option<u32>,
    pub consistent: bool,
}

/// Recomputes a reported naive multi-class cost and flags a redundancy mismatch.
pub fn check_naive_cost(
    items: u64,
    classes: u64,
    seconds_per_label: f64,
    stated_redundancy: u32,
    reported_seconds: f64,
) -> NaiveCostCheck {
    let at = |r| naive_multiclass_seconds(items, classes, seconds_per_label, r);
    let close = |x: f64| (x - reported_seconds).abs() <= 1e-6 * reported_seconds.max(1.0);
    let seconds_at_stated_redundancy = at(stated_redundancy);
    let matching_redundancy = (1..=20).find(|&r| close(at(r)));
    NaiveCostCheck {
        reported_seconds,
        stated_redundancy,
        seconds_at_stated_redundancy,
        matching_redundancy,
        consistent: close(seconds_at_stated_redundancy),
    }
}
