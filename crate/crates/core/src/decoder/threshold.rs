use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ItemId, LabelEstimate};

/// Gold positives and negatives needed to tune a threshold.
pub const MIN_GOLD_PER_CLASS: usize = 5;

/// Added to the largest posterior when no threshold reaches the target.
pub const UNATTAINABLE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTuning {
    pub threshold: f64,
    /// Precision on gold at the returned threshold.
    pub gold_precision: f64,
    pub gold_recall: f64,
    pub unattainable: bool,
    /// Highest negative and lowest positive posterior when gold is separable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separable_gap: Option<(f64, f64)>,
}

fn precision_recall_at(points: &[(f64, bool)], threshold: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut positives) = (0usize, 0usize, 0usize);
    for &(p, label) in points {
        positives += label as usize;
        if p >= threshold {
            if label {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if positives == 0 {
        1.0
    } else {
        tp as f64 / positives as f64
    };
    (precision, recall)
}

/// Picks the decision threshold on gold items.
///
/// Separable gold gets the midpoint between the lowest positive and the
/// highest negative posterior. Otherwise the smallest observed posterior at
/// which gold precision reaches `target_precision` is returned.
pub fn tune_threshold(
    estimates: &[LabelEstimate],
    gold: &BTreeMap<ItemId, bool>,
    target_precision: f64,
) -> Result<ThresholdTuning> {
    let points: Vec<(f64, bool)> = estimates
        .iter()
        .filter_map(|e| gold.get(&e.item_id).map(|&l| (e.posterior, l)))
        .collect();
    let positives = points.iter().filter(|p| p.1).count();
    let negatives = points.len() - positives;
    if positives < MIN_GOLD_PER_CLASS || negatives < MIN_GOLD_PER_CLASS {
        return Err(Error::InsufficientGold {
            positives,
            negatives,
            required: MIN_GOLD_PER_CLASS,
        });
    }

    let lowest_positive = points
        .iter()
        .filter(|p| p.1)
        .map(|p| p.0)
        .fold(f64::INFINITY, f64::min);
    let highest_negative = points
        .iter()
        .filter(|p| !p.1)
        .map(|p| p.0)
        .fold(f64::NEG_INFINITY, f64::max);

    if lowest_positive > highest_negative {
        let threshold = (lowest_positive + highest_negative) / 2.0;
        return Ok(ThresholdTuning {
            threshold,
            gold_precision: 1.0,
            gold_recall: 1.0,
            unattainable: false,
            separable_gap: Some((highest_negative, lowest_positive)),
        });
    }

    let mut candidates: Vec<f64> = points.iter().map(|p| p.0).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for &t in &candidates {
        let (precision, recall) = precision_recall_at(&points, t);
        let predicts_any = points.iter().any(|p| p.0 >= t);
        if predicts_any && precision >= target_precision {
            return Ok(ThresholdTuning {
                threshold: t,
                gold_precision: precision,
                gold_recall: recall,
                unattainable: false,
                separable_gap: None,
            });
        }
    }

    let max = candidates.last().copied().unwrap_or(0.0);
    Ok(ThresholdTuning {
        threshold: max + UNATTAINABLE_EPSILON,
        gold_precision: 1.0,
        gold_recall: 0.0,
        unattainable: true,
        separable_gap: None,
    })
}

/// Smallest posterior at which the mean score of the estimates at or above
/// it reaches `target_precision`. Only meaningful when scores are
/// probabilities. `None` when even the top estimate falls short.
pub fn expected_precision_threshold(
    estimates: &[LabelEstimate],
    target_precision: f64,
) -> Option<f64> {
    let mut ranked: Vec<(f64, f64)> = estimates.iter().map(|e| (e.posterior, e.score)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best = None;
    let (mut sum, mut k) = (0.0, 0usize);
    while k < ranked.len() {
        // Estimates sharing a posterior are kept or dropped together.
        let p = ranked[k].0;
        while k < ranked.len() && ranked[k].0 == p {
            sum += ranked[k].1;
            k += 1;
        }
        if sum / k as f64 >= target_precision {
            best = Some(p);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Decision;

    fn est(scores: &[(&str, f64)]) -> Vec<LabelEstimate> {
        scores
            .iter()
            .map(|&(id, p)| LabelEstimate {
                item_id: id.into(),
                prior: 1.0,
                score: p,
                posterior: p,
                decision: Decision::Undecided,
                coverage: 1,
            })
            .collect()
    }

    fn gold(pos: &[&str], neg: &[&str]) -> BTreeMap<ItemId, bool> {
        pos.iter()
            .map(|&p| (p.into(), true))
            .chain(neg.iter().map(|&n| (n.into(), false)))
            .collect()
    }

    #[test]
    fn separable_uses_midpoint() {
        let e = est(&[
            ("p0", 0.9),
            ("p1", 0.8),
            ("p2", 0.85),
            ("p3", 0.95),
            ("p4", 0.8),
            ("n0", 0.2),
            ("n1", 0.1),
            ("n2", 0.15),
            ("n3", 0.05),
            ("n4", 0.2),
        ]);
        let g = gold(
            &["p0", "p1", "p2", "p3", "p4"],
            &["n0", "n1", "n2", "n3", "n4"],
        );
        let t = tune_threshold(&e, &g, 0.95).unwrap();
        assert!((t.threshold - 0.5).abs() < 1e-12);
        assert_eq!(t.gold_precision, 1.0);
        assert!(!t.unattainable);
    }

    #[test]
    fn all_equal_is_unattainable() {
        let ids: Vec<String> = (0..10).map(|i| format!("g{i}")).collect();
        let e = est(&ids.iter().map(|i| (i.as_str(), 0.4)).collect::<Vec<_>>());
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let g = gold(&refs[..5], &refs[5..]);
        let t = tune_threshold(&e, &g, 0.95).unwrap();
        assert!(t.unattainable);
        assert!(t.threshold > 0.4);
    }

    #[test]
    fn smallest_threshold_reaching_target() {
        // Ranked p p n p p p n n n n: precision 5/6 at 0.6, first reaches 1.0 at 0.85.
        let e = est(&[
            ("p0", 0.9),
            ("p1", 0.85),
            ("n0", 0.8),
            ("p2", 0.7),
            ("p3", 0.65),
            ("p4", 0.6),
            ("n1", 0.3),
            ("n2", 0.2),
            ("n3", 0.1),
            ("n4", 0.05),
        ]);
        let g = gold(
            &["p0", "p1", "p2", "p3", "p4"],
            &["n0", "n1", "n2", "n3", "n4"],
        );
        let t = tune_threshold(&e, &g, 0.8).unwrap();
        assert_eq!(t.threshold, 0.6);
        assert!((t.gold_precision - 5.0 / 6.0).abs() < 1e-12);
        let t = tune_threshold(&e, &g, 0.9).unwrap();
        assert_eq!(t.threshold, 0.85);
        assert_eq!(t.gold_recall, 0.4);
    }

    #[test]
    fn insufficient_gold() {
        let e = est(&[("p0", 0.9), ("n0", 0.1)]);
        let g = gold(&["p0"], &["n0"]);
        assert!(matches!(
            tune_threshold(&e, &g, 0.9),
            Err(Error::InsufficientGold { .. })
        ));
    }

    #[test]
    fn separable_gap_is_reported() {
        let e = est(&[
            ("p0", 0.9),
            ("p1", 0.8),
            ("p2", 0.85),
            ("p3", 0.95),
            ("p4", 0.8),
            ("n0", 0.2),
            ("n1", 0.1),
            ("n2", 0.15),
            ("n3", 0.05),
            ("n4", 0.2),
        ]);
        let g = gold(
            &["p0", "p1", "p2", "p3", "p4"],
            &["n0", "n1", "n2", "n3", "n4"],
        );
        assert_eq!(
            tune_threshold(&e, &g, 0.95).unwrap().separable_gap,
            Some((0.2, 0.8))
        );
    }

    #[test]
    fn expected_precision_walks_down_the_ranking() {
        // Running means: 1.0, 0.95, 0.9, 0.8.
        let e = est(&[("a", 1.0), ("b", 0.9), ("c", 0.8), ("d", 0.5)]);
        assert_eq!(expected_precision_threshold(&e, 0.95), Some(0.9));
        assert_eq!(expected_precision_threshold(&e, 0.9), Some(0.8));
        assert_eq!(expected_precision_threshold(&e, 0.5), Some(0.5));
        assert_eq!(expected_precision_threshold(&est(&[("a", 0.4)]), 0.9), None);
    }

    #[test]
    fn expected_precision_keeps_ties_together() {
        let e = est(&[("a", 1.0), ("b", 0.8), ("c", 0.8)]);
        // Mean with one tie member would be 0.9, with both it is 0.8667.
        assert_eq!(expected_precision_threshold(&e, 0.88), Some(1.0));
    }
}
