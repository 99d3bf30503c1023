//! Brute-force reference for the decoder scores.
//!
//! Every joint assignment of a session's keypresses to their possible sources
//! is enumerated explicitly, so nothing here relies on the factorizations the
//! decoder uses.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rapidlabel_core::decoder::{ReactionModel, BACKGROUND_PASSES};
use rapidlabel_core::scheduler::{Slot, StreamSchedule};
use rapidlabel_core::{DelayModel, ItemId, KeypressEvent, WorkerSession};

pub struct Micro {
    pub priors: BTreeMap<ItemId, f64>,
    pub sessions: Vec<WorkerSession>,
    pub delay: DelayModel,
    pub lookback_ms: f64,
    pub reaction: ReactionModel,
}

/// Up to 8 items, 3 workers and 3 keypresses per worker. A gold positive is
/// mixed into some instances.
pub fn micro_instance(seed: u64) -> Micro {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_items = rng.random_range(1..=8usize);
    let n_workers = rng.random_range(1..=3usize);
    let delta = *[50u32, 100, 200].choose(&mut rng).unwrap();
    let delay = DelayModel::new(rng.random_range(250.0..500.0), rng.random_range(40.0..150.0)).unwrap();
    let lookback_ms = delay.mean_ms + 4.0 * delay.std_ms;
    let with_gold = rng.random_bool(0.3);

    let priors: BTreeMap<ItemId, f64> = (0..n_items)
        .map(|i| (ItemId::new(format!("i{i}")), rng.random_range(0.01..0.99)))
        .collect();
    let reaction = ReactionModel {
        detect_rate: rng.random_range(0.3..0.95),
        false_alarm_rate: rng.random_range(0.001..0.05),
        background_rate: rng.random_range(0.02..0.3),
    };

    let sessions = (0..n_workers)
        .map(|w| {
            let mut order: Vec<(ItemId, Option<bool>)> =
                priors.keys().map(|id| (id.clone(), None)).collect();
            if with_gold {
                order.push((ItemId::new("gold"), Some(true)));
            }
            order.shuffle(&mut rng);
            let slots: Vec<Slot> = order
                .into_iter()
                .enumerate()
                .map(|(j, (item_id, gold))| Slot {
                    item_id,
                    onset_ms: j as f64 * f64::from(delta),
                    gold,
                })
                .collect();
            let end = slots.len() as f64 * f64::from(delta);
            let mut presses: Vec<f64> = (0..rng.random_range(0..=3))
                .map(|_| rng.random_range(0.0..end + lookback_ms))
                .collect();
            presses.sort_by(f64::total_cmp);
            WorkerSession {
                session_id: format!("s{w}").into(),
                worker_id: format!("w{w}").into(),
                task_id: "micro".into(),
                stream: StreamSchedule {
                    chunk: 0,
                    replica: w,
                    slots,
                    countdown_frames: 0,
                    display_interval_ms: delta,
                    rng_seed_used: seed,
                },
                events: presses.into_iter().map(KeypressEvent::human).collect(),
                status: rapidlabel_core::model::SessionStatus::Submitted,
                actual_onsets_ms: None,
            }
        })
        .collect();

    Micro {
        priors,
        sessions,
        delay,
        lookback_ms,
        reaction,
    }
}

fn gaussian(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-z * z / 2.0).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Candidate slots and their delay densities for every keypress; keypresses
/// whose best density is negligible get no candidates.
fn candidates(m: &Micro, s: &WorkerSession) -> Vec<Vec<(usize, f64)>> {
    s.events
        .iter()
        .map(|e| {
            let c: Vec<(usize, f64)> = s
                .stream
                .slots
                .iter()
                .enumerate()
                .filter(|(_, slot)| {
                    let d = e.t_ms - slot.onset_ms;
                    d >= 0.0 && d <= m.lookback_ms
                })
                .map(|(j, slot)| (j, gaussian(e.t_ms - slot.onset_ms, m.delay.mean_ms, m.delay.std_ms)))
                .collect();
            if c.iter().all(|&(_, l)| l < 1e-12) {
                Vec::new()
            } else {
                c
            }
        })
        .collect()
}

/// Calls `visit` with every combination picking one entry per list.
fn for_each_assignment<T: Copy>(lists: &[Vec<T>], visit: &mut dyn FnMut(&[T])) {
    fn go<T: Copy>(lists: &[Vec<T>], picked: &mut Vec<T>, visit: &mut dyn FnMut(&[T])) {
        match lists.split_first() {
            None => visit(picked),
            Some((head, rest)) => {
                for &x in head {
                    picked.push(x);
                    go(rest, picked, visit);
                    picked.pop();
                }
            }
        }
    }
    go(lists, &mut Vec::new(), visit)
}

fn normalize(raw: BTreeMap<ItemId, f64>) -> BTreeMap<ItemId, (f64, f64)> {
    let max = raw.values().copied().fold(0.0, f64::max);
    raw.into_iter()
        .map(|(id, s)| (id, (s, if max > 0.0 { s / max } else { 0.0 })))
        .collect()
}

/// Score and normalized posterior per item when each worker's belief is its
/// expected number of keypresses aimed at the item, capped at one.
pub fn mixture_scores(m: &Micro) -> BTreeMap<ItemId, (f64, f64)> {
    let mut belief_sum: BTreeMap<ItemId, (f64, usize)> = BTreeMap::new();
    for s in &m.sessions {
        let cands = candidates(m, s);
        // Unattributed keypresses take the single "nowhere" choice.
        let lists: Vec<Vec<Option<(usize, f64, f64)>>> = cands
            .iter()
            .map(|c| {
                let total: f64 = c.iter().map(|x| x.1).sum();
                if c.is_empty() {
                    vec![None]
                } else {
                    c.iter().map(|&(j, l)| Some((j, l, total))).collect()
                }
            })
            .collect();
        let mut expected = vec![0.0; s.stream.slots.len()];
        for_each_assignment(&lists, &mut |pick| {
            let p: f64 = pick.iter().flatten().map(|&(_, l, t)| l / t).product();
            for &(j, _, _) in pick.iter().flatten() {
                expected[j] += p;
            }
        });
        for (slot, e) in s.stream.slots.iter().zip(expected) {
            if slot.gold.is_some() {
                continue;
            }
            let entry = belief_sum.entry(slot.item_id.clone()).or_default();
            entry.0 += e.min(1.0);
            entry.1 += 1;
        }
    }
    normalize(
        m.priors
            .iter()
            .map(|(id, &prior)| {
                let (sum, n) = belief_sum.get(id).copied().unwrap_or_default();
                let mean = if n == 0 { 0.0 } else { sum / n as f64 };
                (id.clone(), prior * mean)
            })
            .collect(),
    )
}

#[derive(Clone, Copy)]
enum Source {
    Noise,
    Slot(usize, f64),
}

/// Log likelihood ratio of every slot of one session, summing the marked
/// point-process likelihood over all source assignments with the slot forced
/// positive and then negative.
fn session_log_ratios(m: &Micro, s: &WorkerSession, pi: &[f64]) -> Vec<f64> {
    let r = &m.reaction;
    let noise = r.false_alarm_rate / f64::from(s.stream.display_interval_ms);
    let lists: Vec<Vec<Source>> = candidates(m, s)
        .into_iter()
        .map(|c| std::iter::once(Source::Noise).chain(c.into_iter().map(|(j, l)| Source::Slot(j, l))).collect())
        .collect();
    let attributed: Vec<bool> = lists.iter().map(|l| l.len() > 1).collect();

    (0..s.stream.slots.len())
        .map(|i| {
            let likelihood = |status: f64| {
                let mut total = 0.0;
                for_each_assignment(&lists, &mut |pick| {
                    let mut p = 1.0;
                    for (k, src) in pick.iter().enumerate() {
                        if !attributed[k] {
                            continue;
                        }
                        p *= match *src {
                            Source::Noise => noise,
                            Source::Slot(j, l) if j == i => r.detect_rate * status * l,
                            Source::Slot(j, l) => r.detect_rate * pi[j] * l,
                        };
                    }
                    total += p;
                });
                total
            };
            (likelihood(1.0) / likelihood(0.0)).ln() - r.detect_rate
        })
        .collect()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Score and normalized posterior per item under independent workers, with
/// neighbour probabilities refreshed from the other sessions.
pub fn independent_scores(m: &Micro) -> BTreeMap<ItemId, (f64, f64)> {
    let base = logit(m.reaction.background_rate);
    let fixed = |slot: &Slot| slot.gold.map(|g| if g { 1.0 } else { 0.0 });

    let mut ratios: Vec<Vec<f64>> = m
        .sessions
        .iter()
        .map(|s| {
            let pi: Vec<f64> = s
                .stream
                .slots
                .iter()
                .map(|x| fixed(x).unwrap_or(m.reaction.background_rate))
                .collect();
            session_log_ratios(m, s, &pi)
        })
        .collect();
    for _ in 0..BACKGROUND_PASSES {
        let mut totals: BTreeMap<&ItemId, f64> = BTreeMap::new();
        for (s, lr) in m.sessions.iter().zip(&ratios) {
            for (slot, x) in s.stream.slots.iter().zip(lr) {
                *totals.entry(&slot.item_id).or_default() += x;
            }
        }
        ratios = m
            .sessions
            .iter()
            .zip(&ratios)
            .map(|(s, own)| {
                let pi: Vec<f64> = s
                    .stream
                    .slots
                    .iter()
                    .enumerate()
                    .map(|(j, x)| fixed(x).unwrap_or_else(|| sigmoid(base + totals[&x.item_id] - own[j])))
                    .collect();
                session_log_ratios(m, s, &pi)
            })
            .collect();
    }

    let mut evidence: BTreeMap<&ItemId, f64> = BTreeMap::new();
    for (s, lr) in m.sessions.iter().zip(&ratios) {
        for (slot, x) in s.stream.slots.iter().zip(lr) {
            *evidence.entry(&slot.item_id).or_default() += x;
        }
    }
    normalize(
        m.priors
            .iter()
            .map(|(id, &prior)| (id.clone(), sigmoid(logit(prior) + evidence.get(id).copied().unwrap_or(0.0))))
            .collect(),
    )
}
