#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rapidlabel_core::simulator::{default_rate_recall_curve, generate_session, WorkerProfile};
use rapidlabel_core::{Item, ItemId, KeypressEvent, Payload, SessionId, TaskConfig, TaskId, WorkerId};
use rapidlabel_service::{EventBatch, ManualClock, Service, ServiceConfig};

pub struct Fixture {
    pub items: Vec<Item>,
    pub config: TaskConfig,
    pub truth: BTreeMap<ItemId, bool>,
}

/// 60 real items in two chunks of 30, every fifth one positive, and a gold
/// pool of six positives and six negatives.
pub fn labeling_fixture(redundancy: u32) -> Fixture {
    let mut items = Vec::new();
    let mut truth = BTreeMap::new();
    for i in 0..60 {
        let id = format!("img-{i:03}");
        items.push(Item::new(id.as_str(), Payload::image(format!("{id}.jpg")), 0.1));
        truth.insert(ItemId::new(id), i % 5 == 0);
    }
    for g in 0..12 {
        let id = format!("gold-{g:02}");
        items.push(Item::gold(id.as_str(), Payload::image(format!("{id}.jpg")), 0.1, g < 6));
    }
    let config = TaskConfig {
        redundancy,
        stream_length: 30,
        gold_fraction: 0.2,
        rng_seed: 11,
        ..TaskConfig::default()
    };
    Fixture {
        items,
        config,
        truth,
    }
}

/// Twenty gold items, five of them positive.
pub fn qualification_fixture() -> (Vec<Item>, TaskConfig) {
    let items = (0..20)
        .map(|g| {
            let id = format!("q-{g:02}");
            Item::gold(id.as_str(), Payload::image(format!("{id}.jpg")), 0.05, g % 4 == 0)
        })
        .collect();
    (items, TaskConfig::qualification())
}

pub fn open_service(dir: &std::path::Path) -> Service {
    open_with(ServiceConfig::new(dir))
}

pub fn open_with(config: ServiceConfig) -> Service {
    Service::open(config, Arc::new(ManualClock::new(1_700_000_000_000, 7))).unwrap()
}

/// A simulated worker's keypresses for an issued session.
pub fn simulated_batch(
    svc: &Service,
    session_id: &SessionId,
    truth: &BTreeMap<ItemId, bool>,
    seed: u64,
) -> EventBatch {
    let task = TaskId::new(session_id.as_str().rsplit_once(".s").unwrap().0);
    let state = svc.state(&task).unwrap();
    let session = state.worker_session(&state.sessions[session_id]).unwrap();
    let sim = generate_session(
        &session.stream,
        truth,
        &WorkerProfile::default(),
        &default_rate_recall_curve(),
        seed,
        &session.worker_id,
    )
    .unwrap();
    let end = session.stream.duration_ms() + state.config.lookback_ms;
    EventBatch::new(sim.events.into_iter().filter(|e| e.t_ms <= end).collect())
}

/// Presses 380ms after every gold positive in the session.
pub fn perfect_batch(svc: &Service, session_id: &SessionId) -> EventBatch {
    let task = TaskId::new(session_id.as_str().rsplit_once(".s").unwrap().0);
    let state = svc.state(&task).unwrap();
    let stream = state
        .worker_session(&state.sessions[session_id])
        .unwrap()
        .stream;
    EventBatch::new(
        stream
            .slots
            .iter()
            .filter(|s| s.is_gold_positive())
            .map(|s| KeypressEvent::human(s.onset_ms + 380.0))
            .collect(),
    )
}

/// Creates a qualification task and has `worker` pass it.
pub fn qualify_worker(svc: &Service, worker: &WorkerId) {
    let (items, config) = qualification_fixture();
    let task = svc.create_task(items, config).unwrap().task_id;
    let grant = svc.start_qualification(worker, Some(&task)).unwrap();
    let out = svc
        .submit_qualification(&grant.session_id, perfect_batch(svc, &grant.session_id))
        .unwrap();
    assert!(out.qualification.unwrap().passed);
}
