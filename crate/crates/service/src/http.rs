//! JSON over HTTP, all routes under `/v1`.
//!
//! | method | path | body | answer |
//! |---|---|---|---|
//! | POST | `/v1/tasks` | `{items, config}` | [`CreateOutcome`](crate::CreateOutcome) |
//! | GET | `/v1/tasks/{task_id}` | | [`TaskSummary`](crate::TaskSummary) |
//! | POST | `/v1/tasks/{task_id}/sessions` | `{worker_token}` | [`SessionGrant`](crate::SessionGrant) |
//! | GET | `/v1/sessions/{session_id}/manifest` | | [`Manifest`](crate::Manifest) |
//! | POST | `/v1/sessions/{session_id}/events` | [`EventBatch`](crate::EventBatch) | [`SubmitOutcome`](crate::SubmitOutcome) |
//! | POST | `/v1/tasks/{task_id}/decode` | [`DecodeRequest`](crate::DecodeRequest) | `DecodeResult` |
//! | GET | `/v1/tasks/{task_id}/results` | | `DecodeResult` |
//! | POST | `/v1/qualification/start` | `{worker_token, task_id?}` | [`SessionGrant`](crate::SessionGrant) |
//! | POST | `/v1/qualification/{session_id}/submit` | [`EventBatch`](crate::EventBatch) | [`SubmitOutcome`](crate::SubmitOutcome) |
//!
//! Errors come back as `{"error": "...", "violations": [...]}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rapidlabel_core::{Item, SessionId, TaskConfig, TaskId, WorkerId};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::identity::WorkerIdentity;
use crate::manifest::EventBatch;
use crate::manifest::Manifest;
use crate::service::{DecodeRequest, Service, SubmitOutcome, TaskSummary};

#[derive(Clone)]
struct AppState {
    service: Arc<Service>,
    identity: Arc<dyn WorkerIdentity>,
}

impl AppState {
    fn worker(&self, token: &str) -> Result<WorkerId, ServiceError> {
        self.identity.resolve(token).ok_or(ServiceError::UnknownWorker)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateTaskBody {
    pub items: Vec<Item>,
    pub config: TaskConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OpenSessionBody {
    pub worker_token: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StartQualificationBody {
    pub worker_token: String,
    #[serde(default)]
    pub task_id: Option<TaskId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    violations: Vec<String>,
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use rapidlabel_core::Error as Core;
        match self {
            ServiceError::Validation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::UnknownTask(_)
            | ServiceError::UnknownSession(_)
            | ServiceError::NoResults(_)
            | ServiceError::NoQualificationTask => StatusCode::NOT_FOUND,
            ServiceError::UnknownWorker => StatusCode::UNAUTHORIZED,
            ServiceError::QualificationRequired => StatusCode::FORBIDDEN,
            ServiceError::FullyAssigned
            | ServiceError::TaskClosed(_)
            | ServiceError::SessionClosed(_)
            | ServiceError::DuplicateSubmission(_)
            | ServiceError::InsufficientSessions { .. } => StatusCode::CONFLICT,
            ServiceError::Malformed(_) | ServiceError::NotDecodable(_) => StatusCode::BAD_REQUEST,
            ServiceError::Core(
                Core::InvalidConfig(_)
                | Core::InvalidDelayModel(_)
                | Core::InsufficientGold { .. }
                | Core::InsufficientCalibration { .. }
                | Core::MalformedSession(_),
            ) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let violations = match &self {
            ServiceError::Validation { violations } => violations.clone(),
            _ => Vec::new(),
        };
        let body = ErrorBody {
            error: self.to_string(),
            violations,
        };
        (self.status(), Json(body)).into_response()
    }
}

type Reply<T> = Result<Json<T>, ServiceError>;

/// Runs a blocking service call off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    let service = state.service.clone();
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?
}

pub fn router(service: Arc<Service>, identity: Arc<dyn WorkerIdentity>) -> Router {
    Router::new()
        .route("/v1/tasks", post(create_task))
        .route("/v1/tasks/{task_id}", get(task_summary))
        .route("/v1/tasks/{task_id}/sessions", post(open_session))
        .route("/v1/tasks/{task_id}/decode", post(decode_task))
        .route("/v1/tasks/{task_id}/results", get(results))
        .route("/v1/sessions/{session_id}/manifest", get(manifest))
        .route("/v1/sessions/{session_id}/events", post(submit_events))
        .route("/v1/qualification/start", post(start_qualification))
        .route("/v1/qualification/{session_id}/submit", post(submit_qualification))
        .with_state(AppState { service, identity })
}

async fn create_task(
    State(state): State<AppState>,
    Json(body): Json<CreateTaskBody>,
) -> Result<Response, ServiceError> {
    let out = blocking(&state, move |s| s.create_task(body.items, body.config)).await?;
    let code = if out.created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((code, Json(out)).into_response())
}

async fn task_summary(State(state): State<AppState>, Path(task_id): Path<String>) -> Reply<TaskSummary> {
    blocking(&state, move |s| s.summary(&TaskId::new(task_id))).await.map(Json)
}

async fn open_session(
    State(state): State<AppState>,
    Path(task_id): Path<String>,
    Json(body): Json<OpenSessionBody>,
) -> Result<Response, ServiceError> {
    let worker = state.worker(&body.worker_token)?;
    let grant = blocking(&state, move |s| s.open_session(&TaskId::new(task_id), &worker)).await?;
    Ok((StatusCode::CREATED, Json(grant)).into_response())
}

async fn manifest(State(state): State<AppState>, Path(session_id): Path<String>) -> Reply<Manifest> {
    blocking(&state, move |s| s.manifest(&SessionId::new(session_id)))
        .await
        .map(Json)
}

async fn submit_events(
    State(state): State<AppState>,
    Path(session_id): Path<String>,
    Json(batch): Json<EventBatch>,
) -> Reply<SubmitOutcome> {
    blocking(&state, move |s| s.submit_events(&SessionId::new(session_id), batch))
        .await
        .map(Json)
}

async fn decode_task(
    State(state): State<AppState>,
    Path(task_id): Path<String>,
    body: Bytes,
) -> Reply<rapidlabel_core::decoder::DecodeResult> {
    // An empty body means the task's own settings.
    let request: DecodeRequest = if body.iter().all(u8::is_ascii_whitespace) {
        DecodeRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ServiceError::Malformed(e.to_string()))?
    };
    blocking(&state, move |s| s.decode_task(&TaskId::new(task_id), request))
        .await
        .map(Json)
}

async fn results(
    State(state): State<AppState>,
    Path(task_id): Path<String>,
) -> Reply<rapidlabel_core::decoder::DecodeResult> {
    blocking(&state, move |s| s.results(&TaskId::new(task_id)))
        .await
        .map(Json)
}

async fn start_qualification(
    State(state): State<AppState>,
    Json(body): Json<StartQualificationBody>,
) -> Result<Response, ServiceError> {
    let worker = state.worker(&body.worker_token)?;
    let grant = blocking(&state, move |s| {
        s.start_qualification(&worker, body.task_id.as_ref())
    })
    .await?;
    Ok((StatusCode::CREATED, Json(grant)).into_response())
}

async fn submit_qualification(
    State(state): State<AppState>,
    Path(session_id): Path<String>,
    Json(batch): Json<EventBatch>,
) -> Reply<SubmitOutcome> {
    blocking(&state, move |s| {
        s.submit_qualification(&SessionId::new(session_id), batch)
    })
    .await
    .map(Json)
}

/// Serves the API on `addr` until the process ends.
pub async fn serve(
    service: Arc<Service>,
    identity: Arc<dyn WorkerIdentity>,
    addr: std::net::SocketAddr,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service, identity)).await
}
