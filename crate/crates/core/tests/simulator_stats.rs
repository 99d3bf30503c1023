use std::collections::BTreeMap;

use rapidlabel_core::scheduler::{Slot, StreamSchedule};
use rapidlabel_core::simulator::{default_rate_recall_curve, generate_session, WorkerProfile};
use rapidlabel_core::{ItemId, WorkerId};

/// `n` slots at 100ms with a positive every tenth slot.
fn sparse_stream(n: usize) -> (StreamSchedule, BTreeMap<ItemId, bool>) {
    let slots: Vec<Slot> = (0..n)
        .map(|j| Slot {
            item_id: ItemId::new(format!("i{j}")),
            onset_ms: j as f64 * 100.0,
            gold: None,
        })
        .collect();
    let truth = slots
        .iter()
        .enumerate()
        .map(|(j, s)| (s.item_id.clone(), j % 10 == 0))
        .collect();
    let schedule = StreamSchedule {
        chunk: 0,
        replica: 0,
        slots,
        countdown_frames: 20,
        display_interval_ms: 100,
        rng_seed_used: 0,
    };
    (schedule, truth)
}

#[test]
fn empirical_delay_mean_matches_profile() {
    let profile = WorkerProfile {
        base_detect: 1.0,
        false_alarm_rate: 0.0,
        refractory_ms: 0.0,
        ..WorkerProfile::default()
    };
    let (schedule, truth) = sparse_stream(1000);
    let curve = default_rate_recall_curve();
    let mut delays = Vec::new();
    for seed in 0..100 {
        let s = generate_session(&schedule, &truth, &profile, &curve, seed, &WorkerId::new("w")).unwrap();
        // Positives are 1000ms apart, far beyond any plausible delay.
        delays.extend(s.events.iter().map(|e| e.t_ms % 1000.0));
    }
    assert_eq!(delays.len(), 10_000);
    let mean = delays.iter().sum::<f64>() / delays.len() as f64;
    assert!((376.0..=380.0).contains(&mean), "mean {mean}");
}

#[test]
fn empirical_recall_at_low_rate() {
    let profile = WorkerProfile::default();
    let (schedule, truth) = sparse_stream(1000);
    let curve = default_rate_recall_curve();
    let (mut hits, mut positives) = (0usize, 0usize);
    for seed in 0..100 {
        let s = generate_session(&schedule, &truth, &profile, &curve, seed, &WorkerId::new("w")).unwrap();
        for slot in s.stream.slots.iter().filter(|x| truth[&x.item_id]) {
            positives += 1;
            let t = slot.onset_ms;
            hits += s.events.iter().any(|e| e.t_ms >= t && e.t_ms < t + 1000.0 - 100.0) as usize;
        }
    }
    let recall = hits as f64 / positives as f64;
    assert!((0.75..=0.85).contains(&recall), "recall {recall}");
}

#[test]
fn multiplier_boundaries() {
    let c = default_rate_recall_curve();
    assert_eq!(c.multiplier(100.0, 0.05), 1.0);
    assert_eq!(c.multiplier(100.0, 0.35), 1.0);
    assert!(c.multiplier(100.0, 0.36) < 1.0);
    assert_eq!(c.multiplier(500.0, 0.50), 1.0);
    assert_eq!(c.multiplier(500.0, 0.85), 1.0);
    assert!(c.multiplier(500.0, 0.86) < 1.0);
}

#[test]
fn multiplier_never_rises_with_positive_fraction() {
    let c = default_rate_recall_curve();
    for delta in (50..=1000).step_by(25) {
        let mut last = f64::INFINITY;
        for k in 0..=200 {
            let m = c.multiplier(delta as f64, k as f64 / 200.0);
            assert!(m <= last, "delta {delta} fraction {}", k as f64 / 200.0);
            assert!((0.0..=1.0).contains(&m));
            last = m;
        }
    }
}
