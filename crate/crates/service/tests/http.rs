mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use http_body_util::BodyExt;
use rapidlabel_core::TaskConfig;
use rapidlabel_service::http::router;
use rapidlabel_service::{OpaqueTokens, SessionGrant, SCHEMA_VERSION};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

#[tokio::test]
async fn full_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Arc::new(open_service(dir.path()));
    let app = router(svc.clone(), Arc::new(OpaqueTokens));

    let (items, config) = qualification_fixture();
    let (code, q) = call(&app, "POST", "/v1/tasks", Some(json!({"items": items, "config": config}))).await;
    assert_eq!(code, StatusCode::CREATED);
    let (code, again) = call(&app, "POST", "/v1/tasks", Some(json!({"items": items, "config": config}))).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(again["task_id"], q["task_id"]);

    let f = labeling_fixture(1);
    let (_, t) = call(&app, "POST", "/v1/tasks", Some(json!({"items": f.items, "config": f.config}))).await;
    let task = t["task_id"].as_str().unwrap().to_string();

    let (code, err) = call(&app, "POST", &format!("/v1/tasks/{task}/sessions"), Some(json!({"worker_token": "alice"}))).await;
    assert_eq!(code, StatusCode::FORBIDDEN);
    assert_eq!(err["error"], "qualification required");

    let (code, grant) = call(&app, "POST", "/v1/qualification/start", Some(json!({"worker_token": "alice"}))).await;
    assert_eq!(code, StatusCode::CREATED);
    let grant: SessionGrant = serde_json::from_value(grant).unwrap();
    assert_eq!(grant.manifest.schema_version, SCHEMA_VERSION);
    let batch = perfect_batch(&svc, &grant.session_id);
    let (code, verdict) = call(
        &app,
        "POST",
        &format!("/v1/qualification/{}/submit", grant.session_id),
        Some(serde_json::to_value(&batch).unwrap()),
    )
    .await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(verdict["qualification"]["passed"], true);

    for _ in 0..2 {
        let (code, grant) = call(&app, "POST", &format!("/v1/tasks/{task}/sessions"), Some(json!({"worker_token": "alice"}))).await;
        assert_eq!(code, StatusCode::CREATED);
        let sid = grant["session_id"].as_str().unwrap().to_string();
        let (code, manifest) = call(&app, "GET", &format!("/v1/sessions/{sid}/manifest"), None).await;
        assert_eq!(code, StatusCode::OK);
        assert_eq!(manifest, grant["manifest"]);
        let batch = simulated_batch(&svc, &sid.clone().into(), &f.truth, 3);
        let (code, out) = call(
            &app,
            "POST",
            &format!("/v1/sessions/{sid}/events"),
            Some(serde_json::to_value(&batch).unwrap()),
        )
        .await;
        assert_eq!(code, StatusCode::OK, "{out}");
        assert_eq!(out["status"], "accepted");
        let (code, _) = call(
            &app,
            "POST",
            &format!("/v1/sessions/{sid}/events"),
            Some(serde_json::to_value(&batch).unwrap()),
        )
        .await;
        assert_eq!(code, StatusCode::CONFLICT);
    }

    let (code, _) = call(&app, "GET", &format!("/v1/tasks/{task}/results"), None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let (code, result) = call(&app, "POST", &format!("/v1/tasks/{task}/decode"), Some(json!({"threshold": 0.5}))).await;
    assert_eq!(code, StatusCode::OK, "{result}");
    assert_eq!(result["estimates"].as_array().unwrap().len(), 60);
    assert_eq!(result["threshold_used"], 0.5);
    let (_, fetched) = call(&app, "GET", &format!("/v1/tasks/{task}/results"), None).await;
    assert_eq!(fetched, result);
    let (_, summary) = call(&app, "GET", &format!("/v1/tasks/{task}"), None).await;
    assert_eq!(summary["status"], "complete");
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(open_service(dir.path())), Arc::new(OpaqueTokens));

    let f = labeling_fixture(1);
    let bad = TaskConfig {
        display_interval_ms: 10,
        ..f.config.clone()
    };
    let (code, body) = call(&app, "POST", "/v1/tasks", Some(json!({"items": f.items, "config": bad}))).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["violations"][0].as_str().unwrap().contains("display_interval_ms"));

    let (code, _) = call(&app, "GET", "/v1/tasks/t0000/results", None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let (code, _) = call(&app, "GET", "/v1/sessions/zzz/manifest", None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let (code, _) = call(&app, "POST", "/v1/qualification/start", Some(json!({"worker_token": "bob"}))).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let (code, _) = call(&app, "POST", "/v1/qualification/start", Some(json!({"worker_token": "not ok"}))).await;
    assert_eq!(code, StatusCode::UNAUTHORIZED);

    let (_, t) = call(&app, "POST", "/v1/tasks", Some(json!({"items": f.items, "config": f.config}))).await;
    let task = t["task_id"].as_str().unwrap();
    let (code, body) = call(&app, "POST", &format!("/v1/tasks/{task}/decode"), None).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().starts_with("insufficient sessions"));
}
