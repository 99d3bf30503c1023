//! Joint refinement of the delay and reaction models on gold positives.
//!
//! Matching each gold positive to its first keypress picks up reactions to
//! earlier positives, which drags the mean down and widens the spread. Here
//! every keypress near a gold positive is instead weighted by the chance it
//! was a reaction to that gold item rather than to a neighbour or a false
//! alarm, and the weighted moments are iterated to a fixed point.

use super::delay::{MIN_MATCHES, STD_FLOOR_MS};
use super::score::ReactionModel;
use crate::model::{DelayModel, WorkerSession};

const MAX_ITERATIONS: usize = 100;
const TOLERANCE_MS: f64 = 1e-3;

/// Pseudo-observations of the pooled delay model behind each worker model.
pub const POOLING_STRENGTH: f64 = 200.0;

#[derive(Default)]
struct Moments {
    weight: f64,
    sum: f64,
    sum_sq: f64,
    gold_shown: usize,
    slots: usize,
    presses: usize,
    expected_background: f64,
}

fn e_step(
    sessions: &[&WorkerSession],
    delay: &DelayModel,
    reaction: &ReactionModel,
    lookback_ms: f64,
) -> Moments {
    let d = reaction.detect_rate;
    let mut m = Moments::default();
    let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
    for s in sessions {
        let onsets = s.onsets();
        let slots = &s.stream.slots;
        let noise = reaction.false_alarm_rate / f64::from(s.stream.display_interval_ms.max(1));
        m.slots += slots.len();
        m.presses += s.events.len();
        m.gold_shown += slots.iter().filter(|x| x.is_gold_positive()).count();
        m.expected_background +=
            slots.iter().filter(|x| !x.is_gold()).count() as f64 * reaction.background_rate;

        for e in &s.events {
            candidates.clear();
            candidates.extend(onsets.iter().enumerate().filter_map(|(j, &t)| {
                let delta = e.t_ms - t;
                (0.0..=lookback_ms)
                    .contains(&delta)
                    .then(|| (j, delta, delay.pdf(delta)))
            }));
            let lambda: f64 = noise
                + candidates
                    .iter()
                    .map(|&(j, _, l)| {
                        let pi = match slots[j].gold {
                            Some(true) => 1.0,
                            Some(false) => 0.0,
                            None => reaction.background_rate,
                        };
                        d * pi * l
                    })
                    .sum::<f64>();
            if lambda <= 0.0 {
                continue;
            }
            for &(j, delta, l) in &candidates {
                if slots[j].is_gold_positive() {
                    let r = d * l / lambda;
                    m.weight += r;
                    m.sum += r * delta;
                    m.sum_sq += r * delta * delta;
                }
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub delay: DelayModel,
    pub reaction: ReactionModel,
    /// Expected number of gold reactions behind the estimates.
    pub evidence: f64,
}

/// Refines `delay` and the detect and false alarm rates of `reaction` on the
/// gold positives of `sessions`. Returns the inputs unchanged when there is
/// too little gold evidence.
pub fn refine_models(
    sessions: &[&WorkerSession],
    delay: &DelayModel,
    reaction: &ReactionModel,
    lookback_ms: f64,
) -> Refined {
    let (mut delay, mut reaction, mut evidence) = (delay.clone(), *reaction, 0.0);
    for _ in 0..MAX_ITERATIONS {
        let m = e_step(sessions, &delay, &reaction, lookback_ms);
        if m.weight < MIN_MATCHES as f64 || m.gold_shown == 0 {
            break;
        }
        evidence = m.weight;
        let mean = m.sum / m.weight;
        let std = (m.sum_sq / m.weight - mean * mean)
            .max(0.0)
            .sqrt()
            .max(STD_FLOOR_MS);
        let Ok(next) = DelayModel::new(mean, std) else {
            break;
        };
        let detect = (m.weight / m.gold_shown as f64).clamp(0.05, 0.99);
        let expected = detect * (m.gold_shown as f64 + m.expected_background);
        reaction.detect_rate = detect;
        reaction.false_alarm_rate = ((m.presses as f64 - expected) / m.slots as f64).max(1e-4);

        let moved = (next.mean_ms - delay.mean_ms)
            .abs()
            .max((next.std_ms - delay.std_ms).abs());
        delay = next.with_scope(delay.scope.clone());
        if moved < TOLERANCE_MS {
            break;
        }
    }
    Refined {
        delay,
        reaction,
        evidence,
    }
}

/// Pulls a worker's delay model toward the pooled one, weighting the worker
/// by its gold evidence against `strength` pseudo-observations of the pool.
pub fn shrink_toward(
    worker: &DelayModel,
    evidence: f64,
    pooled: &DelayModel,
    strength: f64,
) -> DelayModel {
    let w = evidence / (evidence + strength);
    let mean = w * worker.mean_ms + (1.0 - w) * pooled.mean_ms;
    let var = w * worker.std_ms.powi(2) + (1.0 - w) * pooled.std_ms.powi(2);
    DelayModel {
        mean_ms: mean,
        std_ms: var.sqrt().max(STD_FLOOR_MS),
        scope: worker.scope.clone(),
    }
}
