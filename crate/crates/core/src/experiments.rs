//! Desk-scale reproductions of the image verification experiments.
//!
//! Everything here is driven by the simulator, so results are deterministic
//! per seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::ClassId;
use crate::decoder::{decode, AggregationKind, DecodeOptions, DecodeResult, ReactionModel};
use crate::error::Result;
use crate::eval::{precision_recall, recall_at_precision, PrecisionRecall};
use crate::model::{Item, ItemId, Payload, TaskConfig, ThresholdSetting, DEFAULT_LOOKBACK_MS};
use crate::simulator::{simulate_experiment, RateRecallCurve, WorkerProfile};
use crate::taskfile::TaskFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSetup {
    pub task_items: usize,
    pub calibration_items: usize,
    pub positive_rate: f64,
    pub display_interval_ms: u32,
    pub redundancy: u32,
    pub stream_length: usize,
    pub gold_positives: usize,
    pub gold_fraction: f64,
    pub target_precision: f64,
    /// Decode with this delay model instead of fitting one on gold.
    pub delay_override: Option<crate::model::DelayModel>,
    /// Decode with these reaction statistics instead of estimating them.
    pub reaction_override: Option<ReactionModel>,
    pub aggregation: AggregationKind,
    pub profile: WorkerProfile,
    pub curve: RateRecallCurve,
}

impl Default for VerificationSetup {
    /// 1,000 items at 5% positives, 100ms, five workers, tuned on a
    /// separate 100-item calibration chunk.
    fn default() -> Self {
        Self {
            task_items: 1000,
            calibration_items: 100,
            positive_rate: 0.05,
            display_interval_ms: 100,
            redundancy: 5,
            stream_length: 100,
            gold_positives: 20,
            gold_fraction: 0.05,
            target_precision: 0.97,
            delay_override: None,
            reaction_override: None,
            aggregation: AggregationKind::default(),
            profile: WorkerProfile::default(),
            curve: RateRecallCurve::default(),
        }
    }
}

/// Generated items with their hidden labels.
#[derive(Debug, Clone)]
pub struct VerificationData {
    pub items: Vec<Item>,
    pub truth: BTreeMap<ItemId, bool>,
    pub calibration: BTreeMap<ItemId, bool>,
    pub task_truth: BTreeMap<ItemId, bool>,
    pub config: TaskConfig,
}

fn labelled(prefix: &str, n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<(ItemId, bool)> {
    let positives = (n as f64 * rate).round() as usize;
    let mut labels: Vec<bool> = (0..n).map(|i| i < positives).collect();
    labels.shuffle(rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| (ItemId::new(format!("{prefix}{i:05}")), l))
        .collect()
}

impl VerificationSetup {
    pub fn generate(&self, seed: u64) -> VerificationData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let calibration = labelled("cal-", self.calibration_items, self.positive_rate, &mut rng);
        let task = labelled("item-", self.task_items, self.positive_rate, &mut rng);

        let prior = self.positive_rate;
        let mut items: Vec<Item> = calibration
            .iter()
            .chain(&task)
            .map(|(id, _)| Item::new(id.clone(), Payload::image(format!("img/{id}.jpg")), prior))
            .collect();
        items.extend((0..self.gold_positives).map(|i| {
            Item::gold(
                format!("gold-{i:03}"),
                Payload::image(format!("gold/{i}.jpg")),
                prior,
                true,
            )
        }));

        let config = TaskConfig {
            display_interval_ms: self.display_interval_ms,
            redundancy: self.redundancy,
            threshold: ThresholdSetting::Auto {
                target_precision: self.target_precision,
            },
            stream_length: self.stream_length,
            gold_fraction: if self.gold_positives > 0 {
                self.gold_fraction
            } else {
                0.0
            },
            lookback_ms: DEFAULT_LOOKBACK_MS,
            rng_seed: seed,
            default_prior: prior,
            ..TaskConfig::default()
        };

        VerificationData {
            truth: calibration.iter().chain(&task).cloned().collect(),
            calibration: calibration.into_iter().collect(),
            task_truth: task.into_iter().collect(),
            items,
            config,
        }
    }

    /// Simulates, decodes with a threshold tuned on the calibration chunk and
    /// scores the task items against their hidden labels.
    pub fn run(&self, seed: u64) -> Result<VerificationOutcome> {
        let data = self.generate(seed);
        let profiles = vec![self.profile.clone(); self.redundancy as usize];
        let sessions = simulate_experiment(
            &data.items,
            &data.truth,
            &data.config,
            &profiles,
            &self.curve,
            seed ^ 0x5eed,
        )?;
        let options = DecodeOptions {
            calibration: data.calibration.clone(),
            tune_on_gold_pool: false,
            delay: self.delay_override.clone(),
            reaction: self.reaction_override,
            aggregation: self.aggregation,
            ..DecodeOptions::from_config(&data.config)
        };
        let result = decode(&data.items, &sessions, &options)?;

        let task_decisions: BTreeMap<ItemId, bool> = result
            .decisions()
            .into_iter()
            .filter(|(id, _)| data.task_truth.contains_key(id))
            .collect();
        let metrics = precision_recall(&task_decisions, &data.task_truth)?;
        let ranked: Vec<bool> = result
            .estimates
            .iter()
            .filter_map(|e| data.task_truth.get(&e.item_id).copied())
            .collect();
        let positives = data.task_truth.values().filter(|&&t| t).count();
        Ok(VerificationOutcome {
            seed,
            metrics,
            recall_at_95: recall_at_precision(&ranked, positives, 0.95),
            result,
        })
    }
}

#[derive(Debug, Clone)]
pub struct VerificationOutcome {
    pub seed: u64,
    /// Task items at the tuned threshold.
    pub metrics: PrecisionRecall,
    /// Best recall over thresholds with precision at least 0.95.
    pub recall_at_95: f64,
    pub result: DecodeResult,
}

/// Mean metrics at one redundancy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub redundancy: u32,
    pub seeds: usize,
    pub mean_recall_at_95: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

/// Runs `setup` at every redundancy in `levels` for seeds `0..seeds`.
pub fn redundancy_sweep(
    setup: &VerificationSetup,
    levels: &[u32],
    seeds: u64,
) -> Result<Vec<SweepPoint>> {
    levels
        .iter()
        .map(|&r| {
            let setup = VerificationSetup {
                redundancy: r,
                ..setup.clone()
            };
            let outcomes: Vec<VerificationOutcome> = (0..seeds)
                .into_par_iter()
                .map(|seed| setup.run(seed))
                .collect::<Result<_>>()?;
            let n = outcomes.len().max(1) as f64;
            let mean =
                |f: &dyn Fn(&VerificationOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
            Ok(SweepPoint {
                redundancy: r,
                seeds: outcomes.len(),
                mean_recall_at_95: mean(&|o| o.recall_at_95),
                mean_precision: mean(&|o| o.metrics.precision),
                mean_recall: mean(&|o| o.metrics.recall),
            })
        })
        .collect()
}

/// One cascade pass decoded from simulated workers: "is this item of class
/// `class`?" over `pool`.
///
/// Real items take their per-class prior (or the default prior) and are
/// positive when their hidden class matches. Gold items with a known class
/// become gold positives or negatives for this pass. Returns the items
/// decoded as positive.
pub fn simulate_cascade_pass(
    file: &TaskFile,
    pool: &[ItemId],
    class: &ClassId,
    profiles: &[WorkerProfile],
    curve: &RateRecallCurve,
    seed: u64,
) -> Result<Vec<ItemId>> {
    let by_id: BTreeMap<&ItemId, &Item> = file.items.iter().map(|i| (&i.item_id, i)).collect();
    let mut items = Vec::with_capacity(pool.len());
    let mut truth = BTreeMap::new();
    for id in pool {
        let item = by_id
            .get(id)
            .ok_or_else(|| crate::Error::UniverseMismatch(id.clone()))?;
        let actual = file
            .classes
            .get(id)
            .ok_or_else(|| crate::Error::MissingTruth(id.clone()))?;
        let prior = file
            .class_priors
            .get(id)
            .and_then(|p| p.get(class))
            .copied()
            .unwrap_or(file.config.default_prior);
        items.push(Item::new(id.clone(), item.payload.clone(), prior));
        truth.insert(id.clone(), actual == class);
    }
    items.extend(file.items.iter().filter(|i| i.is_gold()).filter_map(|g| {
        let c = file.classes.get(&g.item_id)?;
        Some(Item::gold(g.item_id.clone(), g.payload.clone(), g.prior, c == class))
    }));
    let has_gold = items.iter().any(|i| i.is_gold());
    let config = TaskConfig {
        rng_seed: seed,
        gold_fraction: if has_gold { file.config.gold_fraction } else { 0.0 },
        ..file.config.clone()
    };
    let sessions = simulate_experiment(&items, &truth, &config, profiles, curve, seed)?;
    let result = decode(&items, &sessions, &DecodeOptions::from_config(&config))?;
    Ok(result.positives().cloned().collect())
}
