use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WorkerSession;

/// Reactions count as hits up to this long after a gold positive onset.
pub const QUALIFICATION_WINDOW_MS: f64 = 500.0;
pub const MIN_RECALL: f64 = 0.6;
pub const MIN_PRECISION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationResult {
    pub recall: f64,
    pub precision: f64,
    pub passed: bool,
    pub gold_positives: usize,
    pub hits: usize,
    pub keypresses: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Scores a qualification session against its gold positives.
///
/// Both ends of the `[0, window_ms]` window are inclusive.
pub fn qualify(session: &WorkerSession, window_ms: f64) -> Result<QualificationResult> {
    let onsets = session.onsets();
    let gold_onsets: Vec<f64> = session
        .stream
        .slots
        .iter()
        .zip(&onsets)
        .filter(|(s, _)| s.is_gold_positive())
        .map(|(_, &t)| t)
        .collect();
    if gold_onsets.is_empty() {
        return Err(Error::NoGoldPositives);
    }

    let within = |onset: f64, t: f64| (0.0..=window_ms).contains(&(t - onset));
    let keypresses = session.events.len();
    let hits = gold_onsets
        .iter()
        .filter(|&&g| session.events.iter().any(|e| within(g, e.t_ms)))
        .count();
    let on_target = session
        .events
        .iter()
        .filter(|e| gold_onsets.iter().any(|&g| within(g, e.t_ms)))
        .count();

    let recall = hits as f64 / gold_onsets.len() as f64;
    if keypresses == 0 {
        return Ok(QualificationResult {
            recall,
            precision: 0.0,
            passed: false,
            gold_positives: gold_onsets.len(),
            hits,
            keypresses,
            reason: Some("no reactions".into()),
        });
    }
    let precision = on_target as f64 / keypresses as f64;
    let passed = recall >= MIN_RECALL && precision >= MIN_PRECISION;
    let reason = (!passed).then(|| {
        let mut why = Vec::new();
        if recall < MIN_RECALL {
            why.push(format!("recall {recall:.3} below {MIN_RECALL}"));
        }
        if precision < MIN_PRECISION {
            why.push(format!("precision {precision:.3} below {MIN_PRECISION}"));
        }
        why.join("; ")
    });
    Ok(QualificationResult {
        recall,
        precision,
        passed,
        gold_positives: gold_onsets.len(),
        hits,
        keypresses,
        reason,
    })
}
