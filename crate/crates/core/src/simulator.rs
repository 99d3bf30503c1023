//! Synthetic workers with a parametric reaction model.
//!
//! A simulated worker detects each positive with probability
//! `base_detect x curve(interval, local positive fraction)`, reacts after a
//! Gaussian delay truncated at zero, produces occasional false alarms on
//! negatives and cannot press twice within its refractory period.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Item, ItemId, KeypressEvent, SessionId, SessionStatus, TaskConfig, TaskId, WorkerId,
    WorkerSession, DEFAULT_DELAY_MEAN_MS, DEFAULT_DELAY_STD_MS,
};
use crate::scheduler::{build_streams, derive_seed, StreamSchedule};

/// Slots used to measure the local positive fraction around a slot.
pub const LOCAL_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub delay_mean_ms: f64,
    pub delay_std_ms: f64,
    pub base_detect: f64,
    pub false_alarm_rate: f64,
    pub refractory_ms: f64,
}

impl Default for WorkerProfile {
    fn default() -> Self {
        Self {
            delay_mean_ms: DEFAULT_DELAY_MEAN_MS,
            delay_std_ms: DEFAULT_DELAY_STD_MS,
            base_detect: 0.8,
            false_alarm_rate: 0.002,
            refractory_ms: 150.0,
        }
    }
}

impl WorkerProfile {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.base_detect) {
            return bad(format!("base_detect {} outside [0, 1]", self.base_detect));
        }
        if !(0.0..=1.0).contains(&self.false_alarm_rate) {
            return bad(format!(
                "false_alarm_rate {} outside [0, 1]",
                self.false_alarm_rate
            ));
        }
        if !(0.0..2000.0).contains(&self.refractory_ms) {
            return bad(format!(
                "refractory_ms {} outside [0, 2000)",
                self.refractory_ms
            ));
        }
        if !(self.delay_std_ms >= 0.0) || !self.delay_mean_ms.is_finite() {
            return bad("delay parameters must be finite, std non-negative".into());
        }
        Ok(())
    }
}

/// Detection multiplier as a function of display interval and positive fraction.
///
/// Below a speed-dependent drop threshold the multiplier is 1. Above it the
/// multiplier falls linearly to `floor` at a positive fraction of 1. The
/// threshold is interpolated linearly between knots and held flat outside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecallCurve {
    /// `(display_interval_ms, drop_threshold)`, sorted by interval.
    pub knots: Vec<(f64, f64)>,
    pub floor: f64,
}

impl Default for RateRecallCurve {
    fn default() -> Self {
        default_rate_recall_curve()
    }
}

pub fn default_rate_recall_curve() -> RateRecallCurve {
    RateRecallCurve {
        knots: vec![(100.0, 0.35), (500.0, 0.85)],
        floor: 0.3,
    }
}

impl RateRecallCurve {
    pub fn drop_threshold(&self, display_interval_ms: f64) -> f64 {
        let Some(&(first_x, first_y)) = self.knots.first() else {
            return 1.0;
        };
        if display_interval_ms <= first_x {
            return first_y;
        }
        for pair in self.knots.windows(2) {
            let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
            if display_interval_ms <= x1 {
                return y0 + (y1 - y0) * (display_interval_ms - x0) / (x1 - x0);
            }
        }
        self.knots.last().map(|k| k.1).unwrap_or(1.0)
    }

    pub fn multiplier(&self, display_interval_ms: f64, positive_fraction: f64) -> f64 {
        let threshold = self.drop_threshold(display_interval_ms);
        if positive_fraction <= threshold || threshold >= 1.0 {
            return 1.0;
        }
        let excess = (positive_fraction.min(1.0) - threshold) / (1.0 - threshold);
        1.0 - (1.0 - self.floor) * excess
    }
}

/// Fraction of positives among the [`LOCAL_WINDOW`] slots centred on each slot.
fn local_fractions(truth: &[bool]) -> Vec<f64> {
    let half = LOCAL_WINDOW / 2;
    (0..truth.len())
        .map(|j| {
            let lo = j.saturating_sub(half);
            let hi = (j + half).min(truth.len());
            let window = &truth[lo..hi];
            window.iter().filter(|&&t| t).count() as f64 / window.len() as f64
        })
        .collect()
}

/// Simulates one worker watching `schedule`.
///
/// Gold slots use their own label; every other slot needs a `truth` entry.
pub fn generate_session(
    schedule: &StreamSchedule,
    truth: &BTreeMap<ItemId, bool>,
    profile: &WorkerProfile,
    curve: &RateRecallCurve,
    seed: u64,
    worker_id: &WorkerId,
) -> Result<WorkerSession> {
    profile.check()?;
    let labels = schedule
        .slots
        .iter()
        .map(|s| {
            s.gold
                .or_else(|| truth.get(&s.item_id).copied())
                .ok_or_else(|| Error::MissingTruth(s.item_id.clone()))
        })
        .collect::<Result<Vec<bool>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delay = Normal::new(profile.delay_mean_ms, profile.delay_std_ms)
        .map_err(|e| Error::InvalidConfig(format!("delay distribution: {e}")))?;
    let delta = schedule.display_interval_ms as f64;
    let fractions = local_fractions(&labels);

    let mut presses = Vec::new();
    for (j, slot) in schedule.slots.iter().enumerate() {
        if labels[j] {
            let p = profile.base_detect * curve.multiplier(delta, fractions[j]);
            if rng.random_bool(p.clamp(0.0, 1.0)) {
                presses.push(slot.onset_ms + delay.sample(&mut rng).max(0.0));
            }
        } else if rng.random_bool(profile.false_alarm_rate) {
            presses.push(slot.onset_ms + rng.random_range(0.0..delta));
        }
    }
    presses.sort_by(f64::total_cmp);

    let mut events: Vec<KeypressEvent> = Vec::with_capacity(presses.len());
    for t in presses {
        if events
            .last()
            .is_none_or(|last| t - last.t_ms >= profile.refractory_ms)
        {
            events.push(KeypressEvent::simulated(t));
        }
    }

    Ok(WorkerSession {
        session_id: SessionId::new(format!("c{}-r{}", schedule.chunk, schedule.replica)),
        worker_id: worker_id.clone(),
        task_id: TaskId::new("sim"),
        stream: schedule.clone(),
        events,
        status: SessionStatus::Submitted,
        actual_onsets_ms: None,
    })
}

/// Builds every stream of the task and has a simulated worker watch each.
///
/// Replica `r` of chunk `c` is watched by profile `(c + r) % profiles.len()`,
/// so the replicas of a chunk always go to distinct profiles.
pub fn simulate_experiment(
    items: &[Item],
    truth: &BTreeMap<ItemId, bool>,
    config: &TaskConfig,
    profiles: &[WorkerProfile],
    curve: &RateRecallCurve,
    seed: u64,
) -> Result<Vec<WorkerSession>> {
    if profiles.len() < config.redundancy as usize {
        return Err(Error::NotEnoughProfiles {
            found: profiles.len(),
            required: config.redundancy as usize,
        });
    }
    let streams = build_streams(items, config)?;
    streams
        .par_iter()
        .map(|s| {
            let p = (s.chunk + s.replica) % profiles.len();
            generate_session(
                s,
                truth,
                &profiles[p],
                curve,
                derive_seed(seed, s.chunk, s.replica),
                &WorkerId::new(format!("w{p}")),
            )
        })
        .collect()
}
