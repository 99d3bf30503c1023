mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::thread;

use common::*;
use rapidlabel_core::WorkerId;
use rapidlabel_service::EventBatch;

#[test]
fn parallel_open_session_never_shares_a_replica() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Arc::new(open_service(dir.path()));
    let f = labeling_fixture(5);
    let task = svc.create_task(f.items, f.config).unwrap().task_id;
    let workers: Vec<WorkerId> = (0..16).map(|w| WorkerId::new(format!("w{w}"))).collect();
    for w in &workers {
        qualify_worker(&svc, w);
    }

    let handles: Vec<_> = workers
        .iter()
        .cloned()
        .map(|w| {
            let svc = svc.clone();
            let task = task.clone();
            thread::spawn(move || {
                let mut got = Vec::new();
                while let Ok(g) = svc.open_session(&task, &w) {
                    got.push(g.session_id);
                }
                got
            })
        })
        .collect();
    let issued: Vec<_> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    assert_eq!(issued.len(), 10);

    let state = svc.state(&task).unwrap();
    let coords: BTreeSet<_> = state.sessions.values().map(|s| (s.chunk, s.replica)).collect();
    assert_eq!(coords.len(), 10);
    let pairs: BTreeSet<_> = state.sessions.values().map(|s| (s.chunk, &s.worker_id)).collect();
    assert_eq!(pairs.len(), 10);
}

#[test]
fn concurrent_retries_log_one_batch() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Arc::new(open_service(dir.path()));
    let f = labeling_fixture(1);
    let task = svc.create_task(f.items, f.config).unwrap().task_id;
    let w = WorkerId::new("w0");
    qualify_worker(&svc, &w);
    let g = svc.open_session(&task, &w).unwrap();
    let batch: EventBatch = perfect_batch(&svc, &g.session_id).with_key("same");
    let seq = svc.state(&task).unwrap().last_seq;

    let handles: Vec<_> = (0..8)
        .map(|_| {
            let (svc, sid, batch) = (svc.clone(), g.session_id.clone(), batch.clone());
            thread::spawn(move || svc.submit_events(&sid, batch).unwrap())
        })
        .collect();
    let outcomes: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(outcomes.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(svc.state(&task).unwrap().last_seq, seq + 1);
}

#[test]
fn tasks_proceed_independently() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Arc::new(open_service(dir.path()));
    let tasks: Vec<_> = (1..=4)
        .map(|r| {
            let f = labeling_fixture(r);
            svc.create_task(f.items, f.config).unwrap().task_id
        })
        .collect();
    let workers: Vec<WorkerId> = (0..4).map(|w| WorkerId::new(format!("w{w}"))).collect();
    for w in &workers {
        qualify_worker(&svc, w);
    }
    thread::scope(|s| {
        for t in &tasks {
            for w in &workers {
                let svc = &svc;
                s.spawn(move || while svc.open_session(t, w).is_ok() {});
            }
        }
    });
    for (r, t) in tasks.iter().enumerate() {
        assert_eq!(svc.state(t).unwrap().sessions.len(), 2 * (r + 1));
    }
}
