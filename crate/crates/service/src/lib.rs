//! Run service: live closed-loop runs behind HTTP, with an event stream over
//! WebSocket and human inputs for interactive runs.
//!
//! | method | path | |
//! |--------|------|-|
//! | `POST` | `/runs` | create a run from a [`CreateRun`] body |
//! | `GET` | `/runs` | list runs |
//! | `GET` | `/runs/{id}/state` | current [`Snapshot`] |
//! | `POST` | `/runs/{id}/input` | an [`InputRequest`] from the human worker |
//! | `POST` | `/runs/{id}/control` | `{"action": "pause"}` or `{"action": "resume"}` |
//! | `GET` | `/runs/{id}/record` | the finished run's record |
//! | `DELETE` | `/runs/{id}` | stop and forget a run |
//! | WS | `/runs/{id}/events?after=k` | [`FeedEvent`]s with `seq > k` |

mod live;
mod runner;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cobos_core::domain::{TaskId, ValidationReport};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use live::{
    ActorView, Bar, BarKind, CreateRun, EdgeView, FeedEvent, FeedPayload, InputKind, InputRequest, LiveRun, PlanEvent,
    ProgressView, RunMode, RunSummary, Snapshot, TaskStatus, TaskView,
};
pub use runner::{Feed, RunHandle};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_TICK_MS: u64 = 1000;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("invalid job: {0}")]
    InvalidJob(ValidationReport),
    #[error("job does not parse: {0}")]
    MalformedJob(String),
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("task {0} is not requested from or in progress with this actor")]
    NotRequested(TaskId),
    #[error("run is not interactive")]
    RunNotInteractive,
    #[error("run has ended")]
    RunEnded,
    #[error("run is still going")]
    RunNotFinished,
    #[error("task {0}: a phase lasts at least one tick")]
    TooEarly(TaskId),
}

impl ServiceError {
    fn code(&self) -> (StatusCode, &'static str) {
        match self {
            ServiceError::UnknownRun(_) => (StatusCode::NOT_FOUND, "unknown_run"),
            ServiceError::InvalidJob(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_job"),
            ServiceError::MalformedJob(_) => (StatusCode::BAD_REQUEST, "invalid_job"),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ServiceError::NotRequested(_) => (StatusCode::CONFLICT, "not_requested"),
            ServiceError::RunNotInteractive => (StatusCode::CONFLICT, "run_not_interactive"),
            ServiceError::RunEnded => (StatusCode::GONE, "run_ended"),
            ServiceError::RunNotFinished => (StatusCode::CONFLICT, "run_not_finished"),
            ServiceError::TooEarly(_) => (StatusCode::CONFLICT, "too_early"),
        }
    }
}

/// Error body of every failed request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ValidationReport>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, error) = self.code();
        let report = match &self {
            ServiceError::InvalidJob(r) => Some(r.clone()),
            _ => None,
        };
        let body = ErrorBody { error: error.to_string(), message: self.to_string(), report };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub port: u16,
    /// Wall-clock length of one tick; 0 runs as fast as possible.
    pub tick_ms: u64,
    /// Finished runs are written here as `run-{id}.json`.
    pub export_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { port: DEFAULT_PORT, tick_ms: DEFAULT_TICK_MS, export_dir: None }
    }
}

/// Registry of live runs.
pub struct AppState {
    config: ServiceConfig,
    next_id: AtomicU64,
    runs: Mutex<BTreeMap<String, Arc<RunHandle>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self { config, next_id: AtomicU64::new(1), runs: Mutex::new(BTreeMap::new()) })
    }

    pub fn create(&self, request: CreateRun) -> Result<String, ServiceError> {
        let tick = Duration::from_millis(request.tick_ms.unwrap_or(self.config.tick_ms));
        let mut runs = self.runs.lock().expect("registry lock");
        // Ids are only used up by runs that start.
        let id = self.next_id.load(Ordering::Relaxed).to_string();
        let run = LiveRun::new(id.clone(), request)?;
        self.next_id.fetch_add(1, Ordering::Relaxed);
        let handle = RunHandle::spawn(run, tick, self.config.export_dir.clone());
        runs.insert(id.clone(), Arc::new(handle));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<Arc<RunHandle>, ServiceError> {
        self.runs.lock().expect("registry lock").get(id).cloned().ok_or_else(|| ServiceError::UnknownRun(id.into()))
    }

    pub fn remove(&self, id: &str) -> Result<(), ServiceError> {
        let handle = self.runs.lock().expect("registry lock").remove(id);
        handle.ok_or_else(|| ServiceError::UnknownRun(id.into()))?.stop();
        Ok(())
    }

    pub fn list(&self) -> Vec<RunSummary> {
        self.runs.lock().expect("registry lock").values().map(|h| h.summary()).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ack {
    pub ack: cobos_core::sim::InputAck,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Pause,
    Resume,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Control {
    pub action: ControlAction,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct Resume {
    #[serde(default)]
    pub after: u64,
}

async fn create_run(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<Created>), ServiceError> {
    let request: CreateRun = serde_json::from_slice(&body).map_err(|e| ServiceError::MalformedJob(e.to_string()))?;
    let id = state.create(request)?;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Json<Vec<RunSummary>> {
    Json(state.list())
}

async fn get_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Snapshot>, ServiceError> {
    Ok(Json(state.get(&id)?.snapshot().as_ref().clone()))
}

async fn post_input(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Ack>, ServiceError> {
    let req: InputRequest = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let ack = state.get(&id)?.input(req).await?;
    Ok(Json(Ack { ack }))
}

async fn post_control(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<StatusCode, ServiceError> {
    let control: Control = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let handle = state.get(&id)?;
    match control.action {
        ControlAction::Pause => handle.pause(),
        ControlAction::Resume => handle.resume(),
    }
    Ok(StatusCode::NO_CONTENT)
}

async fn get_record(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let record = state.get(&id)?.record().await.ok_or(ServiceError::RunNotFinished)?;
    Ok(Json(record).into_response())
}

async fn delete_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ServiceError> {
    state.remove(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(resume): Query<Resume>,
    ws: WebSocketUpgrade,
) -> Result<Response, ServiceError> {
    let handle = state.get(&id)?;
    Ok(ws.on_upgrade(move |socket| stream_feed(socket, handle, resume.after)))
}

/// Sends every event after `cursor`, then follows the feed until it closes or
/// the client leaves.
async fn stream_feed(mut socket: WebSocket, handle: Arc<RunHandle>, mut cursor: u64) {
    let feed = &handle.feed;
    let mut changes = feed.subscribe();
    loop {
        let closed = feed.is_closed();
        for event in feed.after(cursor) {
            cursor = event.seq;
            let text = serde_json::to_string(&event).expect("events serialize");
            if socket.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
        if closed {
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
        tokio::select! {
            changed = changes.changed() => {
                if changed.is_err() {
                    return;
                }
            }
            incoming = socket.recv() => {
                match incoming {
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => {}
                }
            }
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", axum::routing::delete(delete_run))
        .route("/runs/{id}/state", get(get_state))
        .route("/runs/{id}/input", post(post_input))
        .route("/runs/{id}/control", post(post_control))
        .route("/runs/{id}/record", get(get_record))
        .route("/runs/{id}/events", get(events))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config))).await
}
