//! Multi-class labeling as a sequence of binary verification passes.
//!
//! Each pass asks "is this item of class C?" for every item still in the pool
//! and removes the positives. Running the largest class first keeps the pool
//! small for the remaining passes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::ItemId;

pub type ClassId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountSource {
    PriorEstimate,
    Pilot,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: ClassId,
    pub estimated_count: u64,
    pub source: CountSource,
}

impl ClassStats {
    pub fn exact(class_id: impl Into<ClassId>, count: u64) -> Self {
        Self {
            class_id: class_id.into(),
            estimated_count: count,
            source: CountSource::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeMode {
    /// Classes in a seeded random order.
    Baseline,
    /// Largest estimated class first.
    ClassOptimized,
}

/// Class counts estimated as the sum of per-item prior scores, rounded.
pub fn class_stats_from_priors(
    priors: &BTreeMap<ItemId, BTreeMap<ClassId, f64>>,
) -> Vec<ClassStats> {
    let mut sums: BTreeMap<&ClassId, f64> = BTreeMap::new();
    for per_class in priors.values() {
        for (class, p) in per_class {
            *sums.entry(class).or_default() += p;
        }
    }
    sums.into_iter()
        .map(|(class, s)| ClassStats {
            class_id: class.clone(),
            estimated_count: s.round().max(0.0) as u64,
            source: CountSource::PriorEstimate,
        })
        .collect()
}

pub fn plan_cascade(classes: &[ClassStats], mode: CascadeMode, seed: u64) -> Vec<ClassId> {
    let mut order: Vec<&ClassStats> = classes.iter().collect();
    match mode {
        CascadeMode::ClassOptimized => order.sort_by(|a, b| {
            b.estimated_count
                .cmp(&a.estimated_count)
                .then_with(|| a.class_id.cmp(&b.class_id))
        }),
        CascadeMode::Baseline => {
            order.sort_by(|a, b| a.class_id.cmp(&b.class_id));
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
    }
    order.into_iter().map(|c| c.class_id.clone()).collect()
}

/// Smallest class first: the most expensive order for the baseline.
pub fn worst_case_order(classes: &[ClassStats]) -> Vec<ClassId> {
    let mut order = plan_cascade(classes, CascadeMode::ClassOptimized, 0);
    order.reverse();
    order
}

/// Displays needed for `order` if every pass removes exactly its class.
pub fn expected_displays(
    order: &[ClassId],
    classes: &[ClassStats],
    pool: u64,
    redundancy: u64,
) -> u64 {
    let counts: BTreeMap<&ClassId, u64> = classes
        .iter()
        .map(|c| (&c.class_id, c.estimated_count))
        .collect();
    let mut remaining = pool;
    let mut total = 0;
    for class in order {
        total += remaining * redundancy;
        remaining = remaining.saturating_sub(counts.get(class).copied().unwrap_or(0));
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub class_id: ClassId,
    pub pool_size: usize,
    pub positives: usize,
    pub displays: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CascadeOutcome {
    pub order: Vec<ClassId>,
    pub assignments: BTreeMap<ItemId, ClassId>,
    pub unclassified: Vec<ItemId>,
    pub passes: Vec<PassRecord>,
    pub total_displays: u64,
}

#[derive(Debug)]
pub struct CascadeError<E> {
    pub class_id: ClassId,
    pub partial: CascadeOutcome,
    pub source: E,
}

impl<E: fmt::Display> fmt::Display for CascadeError<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pass for class {} failed after {} passes: {}",
            self.class_id,
            self.partial.passes.len(),
            self.source
        )
    }
}

impl<E: fmt::Debug + fmt::Display> std::error::Error for CascadeError<E> {}

/// Runs passes in the given order.
///
/// `decode` receives the class and the current pool and returns the items it
/// judged positive. Positives outside the pool are ignored.
pub fn run_cascade_in_order<F, E>(
    items: &[ItemId],
    order: &[ClassId],
    redundancy: u64,
    mut decode: F,
) -> Result<CascadeOutcome, CascadeError<E>>
where
    F: FnMut(&ClassId, &[ItemId]) -> Result<Vec<ItemId>, E>,
{
    let mut pool: Vec<ItemId> = items.to_vec();
    let mut out = CascadeOutcome {
        order: order.to_vec(),
        ..Default::default()
    };
    for class in order {
        let displays = pool.len() as u64 * redundancy;
        let positives = match decode(class, &pool) {
            Ok(p) => p,
            Err(source) => {
                out.unclassified = pool;
                return Err(CascadeError {
                    class_id: class.clone(),
                    partial: out,
                    source,
                });
            }
        };
        let positives: BTreeSet<ItemId> = positives.into_iter().collect();
        let before = pool.len();
        pool.retain(|item| {
            if positives.contains(item) {
                out.assignments.insert(item.clone(), class.clone());
                false
            } else {
                true
            }
        });
        out.passes.push(PassRecord {
            class_id: class.clone(),
            pool_size: before,
            positives: before - pool.len(),
            displays,
        });
        out.total_displays += displays;
    }
    out.unclassified = pool;
    Ok(out)
}

pub fn run_cascade<F, E>(
    items: &[ItemId],
    classes: &[ClassStats],
    decode: F,
    mode: CascadeMode,
    seed: u64,
    redundancy: u64,
) -> Result<CascadeOutcome, CascadeError<E>>
where
    F: FnMut(&ClassId, &[ItemId]) -> Result<Vec<ItemId>, E>,
{
    let order = plan_cascade(classes, mode, seed);
    run_cascade_in_order(items, &order, redundancy, decode)
}
