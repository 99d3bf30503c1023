//! Evidence aggregation across workers.
//!
//! Each attributed keypress distributes one unit of intent over the items in
//! its lookback window. Two ways of combining that evidence are provided.
//!
//! [`Aggregation::Mixture`]: a worker's belief in item `i` is the attribution
//! mass it received, capped at 1, and the score is the prior times the mean
//! belief over the sessions that displayed `i`. Misses are not evidence.
//!
//! [`Aggregation::Independent`]: every session is treated as an independent
//! Poisson stream of reactions. A positive item adds `detect_rate` expected
//! keypresses spread by the delay density, on top of a background made of
//! the other candidates and false alarms. The score is the posterior
//! probability after multiplying the per-session likelihood ratios, so an
//! item ignored by most workers loses ground.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::attribution::{attribute_keypresses, Attribution};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::model::{Decision, DelayModel, ItemId, LabelEstimate, WorkerSession};

/// Refreshes of the neighbour probabilities in the independent model.
pub const BACKGROUND_PASSES: usize = 10;

/// Floor on the competing intensity, in keypresses per ms.
const MIN_INTENSITY: f64 = 1e-12;

/// Reaction statistics of the independent-worker model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionModel {
    /// Probability that a worker reacts to a displayed positive.
    pub detect_rate: f64,
    /// Expected spurious keypresses per displayed item.
    pub false_alarm_rate: f64,
    /// Positive probability assumed for non-gold candidates in the background.
    pub background_rate: f64,
}

impl Default for ReactionModel {
    fn default() -> Self {
        Self {
            detect_rate: 0.8,
            false_alarm_rate: 0.002,
            background_rate: 0.05,
        }
    }
}

impl ReactionModel {
    pub fn check(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if unit(self.detect_rate) && unit(self.background_rate) && self.false_alarm_rate >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid reaction model {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Aggregation {
    Mixture,
    Independent(ReactionModel),
}

#[derive(Debug, Default, Clone, Copy)]
struct Mass {
    sum: f64,
    coverage: usize,
    gold: Option<bool>,
}

pub(crate) struct Scored {
    pub estimates: Vec<LabelEstimate>,
    pub attributions: Vec<(usize, Attribution)>,
}

/// Order in which per-session contributions are summed, independent of the
/// order sessions were passed in.
fn reduction_order(sessions: &[WorkerSession]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sessions.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (&sessions[a], &sessions[b]);
        (
            &x.session_id,
            &x.worker_id,
            x.stream.chunk,
            x.stream.replica,
        )
            .cmp(&(
                &y.session_id,
                &y.worker_id,
                y.stream.chunk,
                y.stream.replica,
            ))
    });
    idx
}

/// Per-item belief of one worker, capped at 1, in slot order.
fn session_beliefs(session: &WorkerSession, attribution: &Attribution) -> Vec<f64> {
    let mut by_slot = vec![0.0; session.stream.slots.len()];
    for w in &attribution.weights {
        by_slot[w.slot] += w.weight;
    }
    by_slot.into_iter().map(|p| p.clamp(0.0, 1.0)).collect()
}

/// Per-item log likelihood ratio of one session, in slot order, given the
/// positive probability `pi` of each slot used for the background.
fn session_log_ratios(
    session: &WorkerSession,
    attribution: &Attribution,
    model: &ReactionModel,
    pi: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let d = model.detect_rate;
    let noise = model.false_alarm_rate / f64::from(session.stream.display_interval_ms.max(1));
    let density = |k: usize, weight: f64| weight * attribution.total_likelihood[k];

    // Reaction intensity at each keypress, in keypresses per ms.
    let mut intensity = vec![noise; attribution.total_likelihood.len()];
    for w in &attribution.weights {
        intensity[w.keypress] += d * pi(w.slot) * density(w.keypress, w.weight);
    }

    let mut out = vec![-d; session.stream.slots.len()];
    for w in &attribution.weights {
        let own = d * density(w.keypress, w.weight);
        // Everything but this slot explains the keypress when it is negative.
        let rest = (intensity[w.keypress] - pi(w.slot) * own).max(MIN_INTENSITY);
        out[w.slot] += (own / rest).ln_1p();
    }
    out
}

/// Log likelihood ratios of every session under the independent model.
///
/// The background of each keypress depends on how likely its other
/// candidates are to be positive. Those probabilities are refreshed from the
/// evidence of all other sessions for a fixed number of passes, so a
/// keypress already explained by a confirmed neighbour adds little to the
/// item next to it.
fn independent_log_ratios(
    sessions: &[WorkerSession],
    attributions: &[(usize, Attribution)],
    model: &ReactionModel,
) -> Vec<Vec<f64>> {
    let base = logit(model.background_rate.clamp(1e-9, 1.0 - 1e-9));
    let fixed = |s: &WorkerSession, j: usize| match s.stream.slots[j].gold {
        Some(true) => Some(1.0),
        Some(false) => Some(0.0),
        None => None,
    };

    let mut ratios: Vec<Vec<f64>> = attributions
        .par_iter()
        .map(|(i, a)| {
            let s = &sessions[*i];
            session_log_ratios(s, a, model, |j| {
                fixed(s, j).unwrap_or(model.background_rate)
            })
        })
        .collect();

    for _ in 0..BACKGROUND_PASSES {
        let mut totals: HashMap<&ItemId, f64> = HashMap::new();
        for ((i, _), lr) in attributions.iter().zip(&ratios) {
            for (slot, x) in sessions[*i].stream.slots.iter().zip(lr) {
                *totals.entry(&slot.item_id).or_default() += x;
            }
        }
        ratios = attributions
            .par_iter()
            .zip(&ratios)
            .map(|((i, a), own)| {
                let s = &sessions[*i];
                session_log_ratios(s, a, model, |j| {
                    fixed(s, j).unwrap_or_else(|| {
                        sigmoid(base + totals[&s.stream.slots[j].item_id] - own[j])
                    })
                })
            })
            .collect();
    }
    ratios
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn score_with<'a, F>(
    sessions: &'a [WorkerSession],
    delay_for: F,
    priors: &BTreeMap<ItemId, f64>,
    lookback_ms: f64,
    aggregation: &Aggregation,
    include_gold: bool,
) -> Result<Scored>
where
    F: Fn(&'a WorkerSession) -> &'a DelayModel + Sync,
{
    for s in sessions {
        if let Some(slot) = s
            .stream
            .slots
            .iter()
            .find(|slot| !slot.is_gold() && !priors.contains_key(&slot.item_id))
        {
            return Err(Error::UniverseMismatch(slot.item_id.clone()));
        }
    }

    let order = reduction_order(sessions);
    let attributions: Vec<(usize, Attribution)> = order
        .par_iter()
        .map(|&i| {
            let s = &sessions[i];
            (i, attribute_keypresses(s, delay_for(s), lookback_ms))
        })
        .collect();
    let contributions: Vec<Vec<f64>> = match aggregation {
        Aggregation::Mixture => attributions
            .par_iter()
            .map(|(i, a)| session_beliefs(&sessions[*i], a))
            .collect(),
        Aggregation::Independent(model) => {
            model.check()?;
            independent_log_ratios(sessions, &attributions, model)
        }
    };

    let mut mass: BTreeMap<&ItemId, Mass> = priors.keys().map(|k| (k, Mass::default())).collect();
    for ((i, _), beliefs) in attributions.iter().zip(&contributions) {
        for (slot, p) in sessions[*i].stream.slots.iter().zip(beliefs) {
            if slot.is_gold() && !include_gold {
                continue;
            }
            let m = mass.entry(&slot.item_id).or_default();
            m.sum += p;
            m.coverage += 1;
            m.gold = m.gold.or(slot.gold);
        }
    }

    let mut estimates: Vec<LabelEstimate> = mass
        .into_iter()
        .filter(|(_, m)| include_gold || m.gold.is_none())
        .map(|(id, m)| {
            let prior = priors.get(id).copied().unwrap_or(1.0);
            let score = match aggregation {
                Aggregation::Mixture if m.coverage == 0 => 0.0,
                Aggregation::Mixture => prior * m.sum / m.coverage as f64,
                Aggregation::Independent(_) if prior <= 0.0 || prior >= 1.0 => prior,
                Aggregation::Independent(_) => sigmoid(logit(prior) + m.sum),
            };
            LabelEstimate {
                item_id: id.clone(),
                prior,
                score,
                posterior: 0.0,
                decision: Decision::Undecided,
                coverage: m.coverage,
            }
        })
        .collect();

    let max_score = estimates.iter().map(|e| e.score).fold(0.0, f64::max);
    for e in &mut estimates {
        e.posterior = if max_score > 0.0 {
            (e.score / max_score).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
    estimates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.prior.total_cmp(&a.prior))
            .then_with(|| a.item_id.cmp(&b.item_id))
    });

    Ok(Scored {
        estimates,
        attributions,
    })
}

/// Scores every item of `priors` from the keypresses of all sessions, most
/// likely positive first. Gold slots are used as candidates but not reported.
pub fn score_items(
    sessions: &[WorkerSession],
    delay: &DelayModel,
    priors: &BTreeMap<ItemId, f64>,
    lookback_ms: f64,
) -> Result<Vec<LabelEstimate>> {
    score_items_with(sessions, delay, priors, lookback_ms, &Aggregation::Mixture)
}

/// [`score_items`] with an explicit aggregation rule.
pub fn score_items_with(
    sessions: &[WorkerSession],
    delay: &DelayModel,
    priors: &BTreeMap<ItemId, f64>,
    lookback_ms: f64,
    aggregation: &Aggregation,
) -> Result<Vec<LabelEstimate>> {
    Ok(score_with(sessions, |_| delay, priors, lookback_ms, aggregation, false)?.estimates)
}

/// Sets each decision from the posterior. Ties are positive.
pub fn apply_threshold(estimates: &mut [LabelEstimate], threshold: f64) {
    for e in estimates {
        e.decision = Decision::from_threshold(e.posterior, threshold);
    }
}
