//! HTTP render service: submit renders, poll their status, fetch artifacts.
//!
//! Small requests render inline; larger ones go to a bounded queue drained by
//! a single render worker that uses the whole worker pool.

mod jobs;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use trainfractal_core::formats::RenderRequest;
use trainfractal_core::{preset, ConditionId, RenderControl};

pub use jobs::{Artifacts, JobState, JobStatus};
use jobs::Registry;

/// Requests up to this many pixels are rendered inline.
pub const SYNC_PIXEL_LIMIT: usize = 65_536;
/// Jobs waiting to start; further submissions get 429.
pub const QUEUE_LIMIT: usize = 8;
/// Finished jobs kept in memory.
pub const RETAINED_JOBS: usize = 64;
/// Largest accepted width or height.
pub const MAX_EXTENT: usize = 8192;

pub const WORKERS_ENV: &str = "TRAINFRACTAL_WORKERS";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("invalid {WORKERS_ENV} value `{0}`, expected a positive integer")]
    Workers(String),
    #[error("invalid allowed origin `{0}`")]
    Origin(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Worker count from `TRAINFRACTAL_WORKERS`, if set.
pub fn workers_from_env() -> Result<Option<usize>, ServiceError> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ServiceError::Workers(v)),
        },
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Artifacts of finished jobs are also written to `<out_dir>/<job id>/`.
    pub out_dir: Option<PathBuf>,
    /// Render worker threads; `None` uses all cores.
    pub workers: Option<usize>,
    /// Allowed CORS origins; empty allows any origin.
    pub allowed_origins: Vec<String>,
}

struct Shared {
    registry: Mutex<Registry>,
    /// Held for the duration of every render so only one runs at a time.
    render_lock: Mutex<()>,
    config: ServiceConfig,
}

impl Shared {
    fn registry(&self) -> MutexGuard<'_, Registry> {
        self.registry.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn control(&self) -> Arc<RenderControl> {
        Arc::new(match self.config.workers {
            Some(n) => RenderControl::with_workers(n),
            None => RenderControl::default(),
        })
    }

    /// Render under the render lock, store the result and persist it.
    fn run(&self, id: &str, req: &RenderRequest, control: &RenderControl) -> Result<Arc<Artifacts>, String> {
        let result = {
            let _one_at_a_time = self.render_lock.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(job) = self.registry().get_mut(id).filter(|j| j.state == JobState::Queued) {
                job.state = JobState::Running;
            }
            Artifacts::render(req, control).map(Arc::new).map_err(|e| e.to_string())
        };
        if let Ok(a) = &result {
            if let Err(e) = self.persist(id, req, a) {
                eprintln!("job {id}: could not write artifacts: {e}");
            }
        }
        let mut registry = self.registry();
        registry.finish(id, result.clone());
        registry.evict(RETAINED_JOBS);
        result
    }

    fn persist(&self, id: &str, req: &RenderRequest, a: &Artifacts) -> std::io::Result<()> {
        let Some(root) = &self.config.out_dir else { return Ok(()) };
        let dir = root.join(id);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("image.png"), &a.png)?;
        std::fs::write(dir.join("field.nnfr"), &a.field)?;
        std::fs::write(dir.join("fracdim.csv"), &a.csv)?;
        std::fs::write(dir.join("request.json"), req.to_json())
    }
}

type QueuedJob = (String, RenderRequest, Arc<RenderControl>);

/// Router state: the job registry plus the queue feeding the render worker.
#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
    queue: Arc<Mutex<mpsc::Sender<QueuedJob>>>,
}

impl AppState {
    /// Starts the render worker thread, which exits once every clone of the state is dropped.
    pub fn new(config: ServiceConfig) -> Self {
        let shared = Arc::new(Shared {
            registry: Mutex::new(Registry::default()),
            render_lock: Mutex::new(()),
            config,
        });
        let (tx, rx) = mpsc::channel::<QueuedJob>();
        let worker = shared.clone();
        std::thread::spawn(move || {
            for (id, req, control) in rx {
                // Panics inside a render must not take down the worker.
                let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| worker.run(&id, &req, &control)));
                if outcome.is_err() {
                    worker.registry().finish(&id, Err("render panicked".into()));
                }
            }
        });
        Self { shared, queue: Arc::new(Mutex::new(tx)) }
    }

    /// Keep queued jobs from starting until the guard is dropped.
    pub fn pause(&self) -> MutexGuard<'_, ()> {
        self.shared.render_lock.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Cancel every unfinished job; they end as failed.
    pub fn cancel_all(&self) {
        self.shared.registry().cancel_unfinished();
    }

    /// Status of a job, if the registry still holds it.
    pub fn status(&self, id: &str) -> Option<JobStatus> {
        self.shared.registry().status(id)
    }
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let origins: Vec<HeaderValue> =
        state.shared.config.allowed_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    let cors = if origins.is_empty() { cors.allow_origin(Any) } else { cors.allow_origin(AllowOrigin::list(origins)) };
    Router::new()
        .route("/api/conditions", get(conditions))
        .route("/api/render", post(submit))
        .route("/api/render/{id}/status", get(status))
        .route("/api/render/{id}/{artifact}", get(artifact))
        .layer(cors)
        .with_state(state)
}

/// Serve until interrupted.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<(), ServiceError> {
    for origin in &config.allowed_origins {
        HeaderValue::from_str(origin).map_err(|_| ServiceError::Origin(origin.clone()))?;
    }
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind { addr, source })?;
    println!("listening on http://{}", listener.local_addr()?);
    let state = AppState::new(config);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    state.cancel_all();
    Ok(())
}

fn error(code: StatusCode, message: impl Into<String>) -> Response {
    (code, Json(json!({ "error": message.into() }))).into_response()
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

async fn conditions() -> Json<Value> {
    let list: Vec<Value> = ConditionId::ALL
        .iter()
        .map(|&id| {
            let c = preset(id);
            let axis = |a: trainfractal_core::AxisSpec| {
                json!({
                    "target": format!("{:?}", a.target),
                    "scale": format!("{:?}", a.scale),
                    "lo": a.lo,
                    "hi": a.hi,
                    "label": a.label(),
                })
            };
            json!({
                "id": id.slug(),
                "label": id.label(),
                "nonlinearity": format!("{:?}", c.model.nonlinearity).to_lowercase(),
                "width": c.model.width,
                "dataset_size": c.model.dataset_size,
                "steps": c.train_defaults.steps,
                "batch_size": c.train_defaults.batch_size,
                "threshold": c.train_defaults.divergence_threshold,
                "x_axis": axis(c.x_axis),
                "y_axis": axis(c.y_axis),
            })
        })
        .collect();
    Json(Value::Array(list))
}

fn urls(id: &str) -> Value {
    json!({
        "job_id": id,
        "status_url": format!("/api/render/{id}/status"),
        "image_url": format!("/api/render/{id}/image.png"),
        "field_url": format!("/api/render/{id}/field.nnfr"),
        "fracdim_url": format!("/api/render/{id}/fracdim.csv"),
    })
}

async fn submit(State(state): State<AppState>, body: String) -> Response {
    let req = match RenderRequest::from_json(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    if let Err(e) = req.validate() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
    }
    if req.width > MAX_EXTENT || req.height > MAX_EXTENT {
        return error(StatusCode::UNPROCESSABLE_ENTITY, format!("width and height are limited to {MAX_EXTENT}"));
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let control = state.shared.control();

    if req.pixels() <= SYNC_PIXEL_LIMIT {
        state.shared.registry().insert(id.clone(), req, JobState::Queued, control.clone());
        let shared = state.shared.clone();
        let job = id.clone();
        let result = tokio::task::spawn_blocking(move || shared.run(&job, &req, &control)).await;
        return match result {
            Ok(Ok(a)) => {
                let mut body = urls(&id);
                body["dimension"] = number(a.dimension);
                body["r2"] = number(a.r2);
                (StatusCode::OK, Json(body)).into_response()
            }
            Ok(Err(message)) => error(StatusCode::INTERNAL_SERVER_ERROR, message),
            Err(_) => {
                state.shared.registry().finish(&id, Err("render panicked".into()));
                error(StatusCode::INTERNAL_SERVER_ERROR, "render panicked")
            }
        };
    }

    let mut registry = state.shared.registry();
    if registry.queued() >= QUEUE_LIMIT {
        return error(StatusCode::TOO_MANY_REQUESTS, format!("render queue is full ({QUEUE_LIMIT} waiting)"));
    }
    registry.insert(id.clone(), req, JobState::Queued, control.clone());
    drop(registry);
    let sent = state.queue.lock().unwrap_or_else(|e| e.into_inner()).send((id.clone(), req, control));
    if sent.is_err() {
        state.shared.registry().finish(&id, Err("render worker stopped".into()));
        return error(StatusCode::INTERNAL_SERVER_ERROR, "render worker stopped");
    }
    (StatusCode::ACCEPTED, Json(urls(&id))).into_response()
}

async fn status(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(s) = state.status(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown job `{id}`"));
    };
    let mut body = json!({ "state": s.state.name(), "progress": s.progress });
    if let JobState::Failed(message) = &s.state {
        body["error"] = json!(message);
    }
    if let Some(d) = s.dimension {
        body["dimension"] = number(d);
    }
    Json(body).into_response()
}

async fn artifact(State(state): State<AppState>, Path((id, name)): Path<(String, String)>) -> Response {
    let content_type = match name.as_str() {
        "image.png" => "image/png",
        "field.nnfr" => "application/octet-stream",
        "fracdim.csv" => "text/csv",
        _ => return error(StatusCode::NOT_FOUND, format!("unknown artifact `{name}`")),
    };
    let found = state.shared.registry().get_mut(&id).map(|j| (j.state.clone(), j.artifacts.clone()));
    match found {
        None => error(StatusCode::NOT_FOUND, format!("unknown job `{id}`")),
        Some((_, Some(a))) => {
            let bytes = match name.as_str() {
                "image.png" => a.png.clone(),
                "field.nnfr" => a.field.clone(),
                _ => a.csv.clone(),
            };
            ([(CONTENT_TYPE, content_type)], bytes).into_response()
        }
        Some((s, None)) => error(StatusCode::CONFLICT, format!("job is {}, artifacts are not ready", s.name())),
    }
}
