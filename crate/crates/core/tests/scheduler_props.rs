use std::collections::BTreeMap;

use proptest::prelude::*;
use rapidlabel_core::{build_streams, Item, ItemId, Payload, TaskConfig};

fn items(n: usize, gold: usize) -> Vec<Item> {
    let mut v: Vec<Item> = (0..n)
        .map(|i| Item::new(format!("i{i:04}"), Payload::image(format!("{i}.jpg")), 0.05))
        .collect();
    v.extend((0..gold).map(|g| Item::gold(format!("g{g}"), Payload::image("g.jpg"), 0.05, g % 2 == 0)));
    v
}

/// Kendall tau between two orderings of the same ids.
fn kendall_tau(a: &[ItemId], b: &[ItemId]) -> f64 {
    let pos: BTreeMap<&ItemId, usize> = b.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let rank: Vec<usize> = a.iter().map(|id| pos[id]).collect();
    let n = rank.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += if rank[i] < rank[j] { 1 } else { -1 };
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

#[test]
fn replicas_are_uncorrelated() {
    let items = items(100, 0);
    let total: f64 = (0..1000u64)
        .map(|seed| {
            let config = TaskConfig {
                redundancy: 2,
                gold_fraction: 0.0,
                rng_seed: seed,
                ..TaskConfig::default()
            };
            let s = build_streams(&items, &config).unwrap();
            let order = |k: usize| -> Vec<ItemId> { s[k].slots.iter().map(|x| x.item_id.clone()).collect() };
            kendall_tau(&order(0), &order(1))
        })
        .sum();
    let mean = total / 1000.0;
    assert!(mean.abs() <= 0.05, "mean tau {mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coverage_and_timing(n in 1usize..400, r in 1u32..6, len in 20usize..150, delta in 50u32..600, seed in any::<u64>()) {
        let items = items(n, 10);
        let config = TaskConfig {
            redundancy: r,
            stream_length: len,
            display_interval_ms: delta,
            lookback_ms: f64::from(delta.max(746)),
            rng_seed: seed,
            ..TaskConfig::default()
        };
        let streams = build_streams(&items, &config).unwrap();
        let mut seen: BTreeMap<&ItemId, usize> = BTreeMap::new();
        for s in &streams {
            for (j, slot) in s.slots.iter().enumerate() {
                prop_assert_eq!(slot.onset_ms, j as f64 * f64::from(delta));
                if !slot.is_gold() {
                    *seen.entry(&slot.item_id).or_default() += 1;
                }
            }
            let real = s.real_items().count();
            let gold = s.slots.len() - real;
            prop_assert_eq!(gold, ((config.gold_fraction * real as f64).ceil() as usize).min(10));
        }
        prop_assert_eq!(seen.len(), n);
        prop_assert!(seen.values().all(|&c| c == r as usize));
    }
}
