use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{DelayModel, DelayScope, WorkerId, WorkerSession};

/// Fewer matched delays than this cannot be fitted.
pub const MIN_MATCHES: usize = 10;

/// Lower bound for a fitted standard deviation.
pub const STD_FLOOR_MS: f64 = 10.0;

/// Delay from each gold positive onset to the first keypress within
/// `[0, match_window_ms]` of it.
pub fn matched_delays(session: &WorkerSession, match_window_ms: f64) -> Vec<f64> {
    let onsets = session.onsets();
    session
        .stream
        .slots
        .iter()
        .zip(onsets)
        .filter(|(slot, _)| slot.is_gold_positive())
        .filter_map(|(_, onset)| {
            let first = session.events.partition_point(|e| e.t_ms < onset);
            session
                .events
                .get(first)
                .map(|e| e.t_ms - onset)
                .filter(|&d| d <= match_window_ms)
        })
        .collect()
}

/// Sample mean and standard deviation (n - 1), with the std floored.
pub fn fit_from_delays(delays: &[f64]) -> Result<DelayModel> {
    if delays.len() < 2 {
        return Err(Error::InsufficientCalibration {
            found: delays.len(),
            required: 2,
        });
    }
    let n = delays.len() as f64;
    let mean = delays.iter().sum::<f64>() / n;
    let var = delays.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    DelayModel::new(mean, var.sqrt().max(STD_FLOOR_MS))
}

pub fn fit_delay_model(sessions: &[WorkerSession], match_window_ms: f64) -> Result<DelayModel> {
    let delays: Vec<f64> = sessions
        .iter()
        .flat_map(|s| matched_delays(s, match_window_ms))
        .collect();
    if delays.len() < MIN_MATCHES {
        return Err(Error::InsufficientCalibration {
            found: delays.len(),
            required: MIN_MATCHES,
        });
    }
    fit_from_delays(&delays)
}

/// Per-worker models for workers with at least [`MIN_MATCHES`] gold matches.
pub fn fit_worker_models(
    sessions: &[WorkerSession],
    match_window_ms: f64,
) -> BTreeMap<WorkerId, DelayModel> {
    let mut by_worker: BTreeMap<&WorkerId, Vec<f64>> = BTreeMap::new();
    for s in sessions {
        by_worker
            .entry(&s.worker_id)
            .or_default()
            .extend(matched_delays(s, match_window_ms));
    }
    by_worker
        .into_iter()
        .filter(|(_, d)| d.len() >= MIN_MATCHES)
        .filter_map(|(w, d)| {
            fit_from_delays(&d)
                .ok()
                .map(|m| (w.clone(), m.with_scope(DelayScope::Worker(w.clone()))))
        })
        .collect()
}
