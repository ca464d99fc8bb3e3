//! HTTP API under `/api/v1`, plus optional static UI assets.
//!
//! Mutations honour an `Idempotency-Key` (or `X-Request-Id`) header: a retry
//! with the same key gets the recorded response back without re-running
//! anything.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use portrait_forge_core::faceio::FaceBackend;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::session::{
    ApiError, ApiResult, CachedResponse, CreateRequest, DecisionRequest, PlacementTransform, Session, UploadRequest,
};

const BODY_LIMIT: usize = 512 << 20;

pub struct AppState {
    pub data_dir: PathBuf,
    pub backend: Arc<dyn FaceBackend>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    /// Creation request id to session id.
    created: Mutex<HashMap<String, String>>,
}

impl AppState {
    /// Restores every session journal found under `data_dir`.
    pub fn load(data_dir: &Path, backend: Arc<dyn FaceBackend>) -> std::io::Result<AppState> {
        std::fs::create_dir_all(data_dir)?;
        let mut sessions = HashMap::new();
        let mut created = HashMap::new();
        for entry in std::fs::read_dir(data_dir)? {
            let dir = entry?.path();
            if !Session::journal_path(&dir).is_file() {
                continue;
            }
            match Session::open(&dir) {
                Ok(s) => {
                    if let Some(r) = &s.created_request {
                        created.insert(r.clone(), s.id.clone());
                    }
                    sessions.insert(s.id.clone(), Arc::new(tokio::sync::Mutex::new(s)));
                }
                Err(e) => log::warn!("skipping session {}: {}", dir.display(), e.message),
            }
        }
        log::info!("restored {} session(s) from {}", sessions.len(), data_dir.display());
        Ok(AppState {
            data_dir: data_dir.to_owned(),
            backend,
            sessions: Mutex::new(sessions),
            created: Mutex::new(created),
        })
    }

    fn session(&self, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<Session>>> {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(404, format!("no session '{id}'")))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner()).len()
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/health", get(|| async { Json(json!({ "ok": true })) }))
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/session/{id}/references", post(add_references))
        .route("/session/{id}/frontalness", get(frontalness))
        .route("/session/{id}/placement", post(placement))
        .route("/session/{id}/gallery", post(add_gallery).get(gallery))
        .route("/session/{id}/gallery/{img}/decision", post(decide));
    let app = Router::new()
        .nest("/api/v1", api)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state);
    match static_dir {
        Some(d) => app.fallback_service(ServeDir::new(d)),
        None => app,
    }
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let app = router(state, static_dir.as_deref());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn reply(status: u16, body: Value) -> Response {
    let code = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (code, Json(body)).into_response()
}

fn error_reply(e: ApiError) -> Response {
    if e.status >= 500 {
        log::warn!("{} {}", e.status, e.message);
    }
    reply(e.status, e.to_json())
}

fn cached_reply(c: &CachedResponse) -> Response {
    reply(c.status, c.body.clone())
}

fn request_id(headers: &HeaderMap) -> Option<String> {
    ["idempotency-key", "x-request-id"]
        .iter()
        .find_map(|h| headers.get(*h))
        .and_then(|v| v.to_str().ok())
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return serde_json::from_str("{}").map_err(|e| ApiError::new(422, format!("request body required: {e}")));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::new(422, format!("bad request body: {e}")))
}

/// Runs `op` on the locked session off the async runtime, short-circuiting
/// on a replayed request id.
async fn mutate<T, F>(state: Arc<AppState>, id: String, headers: HeaderMap, body: Bytes, op: F) -> Response
where
    T: DeserializeOwned + Send + 'static,
    F: FnOnce(&mut Session, &Arc<dyn FaceBackend>, T, Option<&str>) -> ApiResult<Value> + Send + 'static,
{
    let sess = match state.session(&id) {
        Ok(s) => s,
        Err(e) => return error_reply(e),
    };
    let guard = sess.lock_owned().await;
    let rid = request_id(&headers);
    let backend = state.backend.clone();
    let joined = tokio::task::spawn_blocking(move || {
        let mut s = guard;
        if let Some(c) = s.cached(rid.as_deref()) {
            return Ok(cached_reply(c));
        }
        let req: T = parse(&body)?;
        op(&mut s, &backend, req, rid.as_deref()).map(|v| reply(200, v))
    })
    .await;
    match joined {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => error_reply(e),
        Err(e) => error_reply(ApiError::new(500, format!("worker failed: {e}"))),
    }
}

async fn create_session(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let rid = request_id(&headers);
    let known = rid.as_ref().and_then(|r| state.created.lock().unwrap_or_else(|p| p.into_inner()).get(r).cloned());
    if let Some(sid) = known {
        if let Ok(sess) = state.session(&sid) {
            let s = sess.lock().await;
            if let Some(c) = s.cached(rid.as_deref()) {
                return cached_reply(c);
            }
        }
    }
    let req: CreateRequest = match parse(&body) {
        Ok(r) => r,
        Err(e) => return error_reply(e),
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    match Session::create(&state.data_dir, &id, &req, rid.as_deref()) {
        Ok((s, body)) => {
            state
                .sessions
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(s)));
            if let Some(r) = rid {
                state.created.lock().unwrap_or_else(|p| p.into_inner()).insert(r, id);
            }
            reply(201, body)
        }
        Err(e) => error_reply(e),
    }
}

async fn read_only(state: &AppState, id: &str, f: impl FnOnce(&Session) -> ApiResult<Value>) -> Response {
    match state.session(id) {
        Ok(sess) => {
            let s = sess.lock().await;
            match f(&s) {
                Ok(v) => reply(200, v),
                Err(e) => error_reply(e),
            }
        }
        Err(e) => error_reply(e),
    }
}

async fn get_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    read_only(&state, &id, |s| Ok(s.summary())).await
}

async fn frontalness(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    read_only(&state, &id, |s| Ok(s.frontalness())).await
}

async fn gallery(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    read_only(&state, &id, |s| s.gallery_page()).await
}

async fn add_references(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    mutate(state, id, headers, body, |s, b, req: UploadRequest, rid| s.add_references(b, &req, rid)).await
}

async fn placement(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    mutate(state, id, headers, body, |s, _, t: PlacementTransform, rid| s.placement(&t, rid)).await
}

async fn add_gallery(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    mutate(state, id, headers, body, |s, b, req: UploadRequest, rid| s.add_gallery(b, &req, rid)).await
}

async fn decide(
    State(state): State<Arc<AppState>>,
    UrlPath((id, img)): UrlPath<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    mutate(state, id, headers, body, move |s, _, req: DecisionRequest, rid| s.decide(&img, &req, rid)).await
}
