use std::collections::BTreeMap;

use proptest::prelude::*;
use rapidlabel_core::cascade::{
    expected_displays, plan_cascade, run_cascade, run_cascade_in_order, worst_case_order, CascadeMode, ClassId,
    ClassStats,
};
use rapidlabel_core::ItemId;

/// Items labelled by class: `sizes[k]` items of class `c{k}`.
fn labelled(sizes: &[u64]) -> (Vec<ItemId>, BTreeMap<ItemId, ClassId>, Vec<ClassStats>) {
    let mut items = Vec::new();
    let mut truth = BTreeMap::new();
    for (k, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let id = ItemId::new(format!("c{k}-{i}"));
            truth.insert(id.clone(), format!("c{k}"));
            items.push(id);
        }
    }
    let stats = sizes.iter().enumerate().map(|(k, &n)| ClassStats::exact(format!("c{k}"), n)).collect();
    (items, truth, stats)
}

/// Direct simulation: every pass shows the whole remaining pool, then drops
/// the items of that class.
fn pool_shrinkage(order: &[ClassId], truth: &BTreeMap<ItemId, ClassId>, redundancy: u64) -> u64 {
    let mut pool: Vec<&ClassId> = truth.values().collect();
    let mut total = 0;
    for class in order {
        total += pool.len() as u64 * redundancy;
        pool.retain(|c| *c != class);
    }
    total
}

fn perfect<'a>(
    truth: &'a BTreeMap<ItemId, ClassId>,
) -> impl FnMut(&ClassId, &[ItemId]) -> Result<Vec<ItemId>, std::convert::Infallible> + 'a {
    move |class, pool| Ok(pool.iter().filter(|i| &truth[*i] == class).cloned().collect())
}

#[test]
fn skewed_ten_classes() {
    let mut sizes = vec![1000];
    sizes.extend([10; 9]);
    let (items, truth, stats) = labelled(&sizes);

    let optimized = run_cascade(&items, &stats, perfect(&truth), CascadeMode::ClassOptimized, 0, 1).unwrap();
    assert_eq!(optimized.total_displays, 1540);
    assert_eq!(optimized.total_displays, pool_shrinkage(&optimized.order, &truth, 1));

    let worst = worst_case_order(&stats);
    let baseline = run_cascade_in_order(&items, &worst, 1, perfect(&truth)).unwrap();
    assert_eq!(baseline.total_displays, 10450);
    assert_eq!(baseline.total_displays, pool_shrinkage(&worst, &truth, 1));
}

#[test]
fn doubling_the_dominant_class() {
    let displays = |n: u64| {
        let mut sizes = vec![n];
        sizes.extend([10; 9]);
        let (_, truth, stats) = labelled(&sizes);
        let opt = plan_cascade(&stats, CascadeMode::ClassOptimized, 0);
        let worst = worst_case_order(&stats);
        (pool_shrinkage(&opt, &truth, 1) as f64, pool_shrinkage(&worst, &truth, 1) as f64)
    };
    let (o1, w1) = displays(1000);
    let (o2, w2) = displays(2000);
    // Optimized pays for the big class once, the worst order once per class.
    assert!((o2 - o1 - 1000.0).abs() < 1e-9);
    assert!((w2 - w1 - 10_000.0).abs() < 1e-9);
    assert!(w2 / o2 > w1 / o1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimized_never_costs_more(sizes in prop::collection::vec(0u64..60, 1..8), seed in any::<u64>(), r in 1u64..4) {
        let (items, truth, stats) = labelled(&sizes);
        let opt = run_cascade(&items, &stats, perfect(&truth), CascadeMode::ClassOptimized, seed, r).unwrap();
        let base = run_cascade(&items, &stats, perfect(&truth), CascadeMode::Baseline, seed, r).unwrap();
        let worst = worst_case_order(&stats);
        prop_assert_eq!(opt.total_displays, pool_shrinkage(&opt.order, &truth, r));
        prop_assert_eq!(base.total_displays, pool_shrinkage(&base.order, &truth, r));
        prop_assert_eq!(opt.total_displays, expected_displays(&opt.order, &stats, items.len() as u64, r));
        let worst_total = pool_shrinkage(&worst, &truth, r);
        prop_assert!(opt.total_displays <= base.total_displays);
        prop_assert!(base.total_displays <= worst_total);

        // Perfect decoding partitions the items.
        prop_assert!(opt.unclassified.is_empty());
        prop_assert_eq!(opt.assignments.len(), items.len());
        prop_assert!(opt.assignments.iter().all(|(i, c)| &truth[i] == c));
    }

    #[test]
    fn equal_sizes_cost_the_same(n in 1u64..50, k in 1usize..8, seed in any::<u64>()) {
        let (items, truth, stats) = labelled(&vec![n; k]);
        let opt = run_cascade(&items, &stats, perfect(&truth), CascadeMode::ClassOptimized, seed, 1).unwrap();
        let base = run_cascade(&items, &stats, perfect(&truth), CascadeMode::Baseline, seed, 1).unwrap();
        prop_assert_eq!(opt.total_displays, base.total_displays);
    }
}
