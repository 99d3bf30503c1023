//! Recovers item labels from delayed keypresses.
//!
//! The pipeline is: fit the delay Gaussian on gold positives, attribute every
//! keypress to the items displayed shortly before it, aggregate attribution
//! mass across workers, then threshold the normalized scores.

mod attribution;
mod delay;
mod qualify;
mod refine;
mod score;
mod threshold;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use attribution::{attribute_keypresses, Attribution, AttributionWeight, MIN_LIKELIHOOD};
pub use delay::{
    fit_delay_model, fit_from_delays, fit_worker_models, matched_delays, MIN_MATCHES, STD_FLOOR_MS,
};
pub use qualify::{
    qualify, QualificationResult, MIN_PRECISION, MIN_RECALL, QUALIFICATION_WINDOW_MS,
};
pub use refine::{refine_models, shrink_toward, Refined, POOLING_STRENGTH};
pub use score::{
    apply_threshold, score_items, score_items_with, Aggregation, ReactionModel, BACKGROUND_PASSES,
};
pub use threshold::{
    expected_precision_threshold, tune_threshold, ThresholdTuning, MIN_GOLD_PER_CLASS,
    UNATTAINABLE_EPSILON,
};

use crate::error::{Error, Result};
use crate::model::{
    DelayModel, Item, ItemId, LabelEstimate, TaskConfig, ThresholdSetting, WorkerId, WorkerSession,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub threshold: ThresholdSetting,
    pub lookback_ms: f64,
    /// Use this delay model instead of fitting one on gold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelayModel>,
    /// Gold matching window used when fitting delay models.
    pub match_window_ms: f64,
    /// Fit a separate delay model for workers with enough gold matches.
    pub per_worker_delay: bool,
    /// Known labels of real items, used for threshold tuning next to the gold pool.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub calibration: BTreeMap<ItemId, bool>,
    /// Whether gold pool items take part in threshold tuning.
    #[serde(default = "default_true")]
    pub tune_on_gold_pool: bool,
    #[serde(default)]
    pub aggregation: AggregationKind,
    /// Use these reaction statistics instead of estimating them from gold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reaction: Option<ReactionModel>,
    /// Re-weight gold matches by how likely each keypress answered the gold
    /// item before trusting the fitted delay model.
    #[serde(default = "default_true")]
    pub refine_delay: bool,
}

/// How evidence is combined across workers, see [`Aggregation`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    Mixture,
    #[default]
    Independent,
}

fn default_true() -> bool {
    true
}

impl DecodeOptions {
    pub fn from_config(config: &TaskConfig) -> Self {
        Self {
            threshold: config.threshold,
            lookback_ms: config.lookback_ms,
            delay: None,
            match_window_ms: config.lookback_ms,
            per_worker_delay: true,
            calibration: BTreeMap::new(),
            tune_on_gold_pool: true,
            aggregation: AggregationKind::default(),
            reaction: None,
            refine_delay: true,
        }
    }
}

/// Caller-supplied adjustments on top of the task configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_precision: Option<f64>,
    /// Fixed threshold; wins over `target_precision`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookback_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_mean_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_std_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<AggregationKind>,
}

impl DecodeOverrides {
    pub fn options(&self, config: &TaskConfig) -> Result<DecodeOptions> {
        let mut o = DecodeOptions::from_config(config);
        if let Some(p) = self.target_precision {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidConfig(format!("target precision {p} outside (0, 1]")));
            }
            o.threshold = ThresholdSetting::Auto { target_precision: p };
        }
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidConfig(format!("threshold {t} outside [0, 1]")));
            }
            o.threshold = ThresholdSetting::Fixed(t);
        }
        if let Some(l) = self.lookback_ms {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidConfig(format!("lookback_ms {l} must be positive")));
            }
            o.lookback_ms = l;
            o.match_window_ms = l;
        }
        if self.delay_mean_ms.is_some() || self.delay_std_ms.is_some() {
            let d = DelayModel::default();
            o.delay = Some(DelayModel::new(
                self.delay_mean_ms.unwrap_or(d.mean_ms),
                self.delay_std_ms.unwrap_or(d.std_ms),
            )?);
        }
        if let Some(a) = self.aggregation {
            o.aggregation = a;
        }
        Ok(o)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerDiagnostics {
    pub worker_id: WorkerId,
    pub sessions: usize,
    pub keypresses: usize,
    pub unattributed: usize,
    pub gold_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// One estimate per real item, most likely positive first.
    pub estimates: Vec<LabelEstimate>,
    pub threshold_used: f64,
    pub delay_model_used: DelayModel,
    /// Reaction statistics behind the independent-worker scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reaction_model_used: Option<ReactionModel>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub worker_delay_models: BTreeMap<WorkerId, DelayModel>,
    pub diagnostics: Vec<WorkerDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<ThresholdTuning>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl DecodeResult {
    pub fn positives(&self) -> impl Iterator<Item = &ItemId> {
        self.estimates
            .iter()
            .filter(|e| e.decision == crate::model::Decision::Positive)
            .map(|e| &e.item_id)
    }

    pub fn decisions(&self) -> BTreeMap<ItemId, bool> {
        self.estimates
            .iter()
            .map(|e| {
                (
                    e.item_id.clone(),
                    e.decision == crate::model::Decision::Positive,
                )
            })
            .collect()
    }
}

/// Reaction statistics from the gold slots and the overall keypress rate.
///
/// The detect rate is the share of displayed gold positives that drew a
/// matching keypress; false alarms are whatever keypress volume is left
/// after the expected reactions to positives.
pub fn estimate_reaction_model(
    items: &[Item],
    sessions: &[WorkerSession],
    match_window_ms: f64,
) -> ReactionModel {
    let real: Vec<&Item> = items.iter().filter(|i| !i.is_gold()).collect();
    let background_rate = if real.is_empty() {
        ReactionModel::default().background_rate
    } else {
        real.iter().map(|i| i.prior).sum::<f64>() / real.len() as f64
    };

    let gold_shown: usize = sessions
        .iter()
        .map(|s| {
            s.stream
                .slots
                .iter()
                .filter(|x| x.is_gold_positive())
                .count()
        })
        .sum();
    let gold_hit: usize = sessions
        .iter()
        .map(|s| matched_delays(s, match_window_ms).len())
        .sum();
    let detect_rate = if gold_shown == 0 {
        ReactionModel::default().detect_rate
    } else {
        (gold_hit as f64 / gold_shown as f64).clamp(0.05, 0.99)
    };

    let (mut slots, mut expected, mut presses) = (0usize, 0.0, 0usize);
    for s in sessions {
        slots += s.stream.slots.len();
        presses += s.events.len();
        expected += s
            .stream
            .slots
            .iter()
            .map(|x| match x.gold {
                Some(true) => detect_rate,
                Some(false) => 0.0,
                None => detect_rate * background_rate,
            })
            .sum::<f64>();
    }
    let false_alarm_rate = if slots == 0 {
        ReactionModel::default().false_alarm_rate
    } else {
        ((presses as f64 - expected) / slots as f64).max(1e-4)
    };

    ReactionModel {
        detect_rate,
        false_alarm_rate,
        background_rate,
    }
}

/// Full decode of a task: delay fit, scoring, threshold selection.
pub fn decode(
    items: &[Item],
    sessions: &[WorkerSession],
    options: &DecodeOptions,
) -> Result<DecodeResult> {
    let mut flags = Vec::new();

    let estimated = match options.reaction {
        Some(r) => {
            r.check()?;
            r
        }
        None => estimate_reaction_model(items, sessions, options.match_window_ms),
    };
    let mut reaction = estimated;

    let (global, worker_models) = match &options.delay {
        Some(model) => {
            model.check()?;
            (model.clone(), BTreeMap::new())
        }
        None => {
            let mut global = match fit_delay_model(sessions, options.match_window_ms) {
                Ok(m) => m,
                Err(e) => {
                    flags.push(format!("default delay model used: {e}"));
                    DelayModel::default()
                }
            };
            let all: Vec<&WorkerSession> = sessions.iter().collect();
            if options.refine_delay {
                let refined = refine_models(&all, &global, &reaction, options.lookback_ms);
                global = refined.delay;
                if options.reaction.is_none() {
                    reaction = refined.reaction;
                }
            }
            let mut per_worker = if options.per_worker_delay {
                fit_worker_models(sessions, options.match_window_ms)
            } else {
                BTreeMap::new()
            };
            if options.refine_delay {
                for (worker, model) in per_worker.iter_mut() {
                    let own: Vec<&WorkerSession> = all
                        .iter()
                        .copied()
                        .filter(|s| &s.worker_id == worker)
                        .collect();
                    let refined = refine_models(&own, model, &reaction, options.lookback_ms);
                    *model =
                        shrink_toward(&refined.delay, refined.evidence, &global, POOLING_STRENGTH);
                }
            }
            (global, per_worker)
        }
    };

    let aggregation = match options.aggregation {
        AggregationKind::Mixture => Aggregation::Mixture,
        AggregationKind::Independent => Aggregation::Independent(reaction),
    };

    let priors: BTreeMap<ItemId, f64> =
        items.iter().map(|i| (i.item_id.clone(), i.prior)).collect();
    let scored = score::score_with(
        sessions,
        |s| worker_models.get(&s.worker_id).unwrap_or(&global),
        &priors,
        options.lookback_ms,
        &aggregation,
        true,
    )?;
    let mut all = scored.estimates;

    let gold_ids: std::collections::BTreeSet<&ItemId> = items
        .iter()
        .filter(|i| i.is_gold())
        .map(|i| &i.item_id)
        .collect();

    let (threshold, tuning) = match options.threshold {
        ThresholdSetting::Fixed(t) => (t, None),
        ThresholdSetting::Auto { target_precision } => {
            let mut gold: BTreeMap<ItemId, bool> = BTreeMap::new();
            if options.tune_on_gold_pool {
                gold.extend(
                    items
                        .iter()
                        .filter_map(|i| i.gold_label.map(|l| (i.item_id.clone(), l))),
                );
            }
            gold.extend(options.calibration.iter().map(|(k, &v)| (k.clone(), v)));
            let mut tuning = tune_threshold(&all, &gold, target_precision)?;
            if tuning.unattainable {
                flags.push("precision target unattainable".into());
            }
            // Any point of a separable gap is perfect on gold. When scores
            // are probabilities, let the whole task pick where in the gap.
            if let (Aggregation::Independent(_), Some((low, high))) =
                (&aggregation, tuning.separable_gap)
            {
                let real: Vec<LabelEstimate> = all
                    .iter()
                    .filter(|e| !gold_ids.contains(&e.item_id))
                    .cloned()
                    .collect();
                if let Some(t) = expected_precision_threshold(&real, target_precision) {
                    if t > low {
                        tuning.threshold = t.min(high);
                        flags.push("threshold placed by expected precision".into());
                    }
                }
            }
            (tuning.threshold, Some(tuning))
        }
    };
    apply_threshold(&mut all, threshold);

    let estimates: Vec<LabelEstimate> = all
        .into_iter()
        .filter(|e| !gold_ids.contains(&e.item_id))
        .collect();

    let mut diagnostics: BTreeMap<&WorkerId, WorkerDiagnostics> = BTreeMap::new();
    for (i, attribution) in &scored.attributions {
        let s = &sessions[*i];
        let d = diagnostics
            .entry(&s.worker_id)
            .or_insert_with(|| WorkerDiagnostics {
                worker_id: s.worker_id.clone(),
                ..Default::default()
            });
        d.sessions += 1;
        d.keypresses += s.events.len();
        d.unattributed += attribution.unattributed.len();
        d.gold_hits += matched_delays(s, options.match_window_ms).len();
    }

    Ok(DecodeResult {
        estimates,
        threshold_used: threshold,
        delay_model_used: global,
        reaction_model_used: match aggregation {
            Aggregation::Independent(r) => Some(r),
            Aggregation::Mixture => None,
        },
        worker_delay_models: worker_models,
        diagnostics: diagnostics.into_values().collect(),
        tuning,
        flags,
    })
}
