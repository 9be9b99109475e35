//! HTTP inference service for the dialogue inspector.

mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use session::{model_info, ActView, ModelInfo, ServingSession, SlotInfo, TurnResult, ValueProb, TOP_K};

use crate::model::Model;
use crate::Error;

pub const MAX_BODY_BYTES: usize = 8 * 1024;
pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);

struct Entry {
    session: Arc<tokio::sync::Mutex<ServingSession>>,
    last_used: Instant,
}

pub struct AppState {
    model: Arc<Model<f32>>,
    sessions: Mutex<HashMap<String, Entry>>,
    ids: Mutex<ChaCha8Rng>,
    ttl: Duration,
}

impl AppState {
    pub fn new(model: Model<f32>, ttl: Duration) -> Self {
        let seed = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64);
        AppState {
            model: Arc::new(model),
            sessions: Mutex::new(HashMap::new()),
            ids: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            ttl,
        }
    }

    /// Drops sessions idle for longer than the TTL.
    fn expire(&self, now: Instant) {
        let ttl = self.ttl;
        self.sessions
            .lock()
            .expect("session map lock")
            .retain(|_, e| now.duration_since(e.last_used) <= ttl);
    }

    fn lookup(&self, id: &str) -> Option<Arc<tokio::sync::Mutex<ServingSession>>> {
        let now = Instant::now();
        self.expire(now);
        let mut map = self.sessions.lock().expect("session map lock");
        let e = map.get_mut(id)?;
        e.last_used = now;
        Some(e.session.clone())
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}"))
}

#[derive(Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
}

#[derive(Deserialize)]
pub struct TurnRequest {
    pub utterance: String,
}

#[derive(Serialize)]
pub struct Transcript {
    pub session_id: String,
    pub turns: Vec<TurnResult>,
}

async fn create_session(State(st): State<Arc<AppState>>) -> (StatusCode, Json<CreatedSession>) {
    st.expire(Instant::now());
    let id = format!("{:016x}", st.ids.lock().expect("id lock").gen::<u64>());
    let entry = Entry {
        session: Arc::new(tokio::sync::Mutex::new(ServingSession::new(&st.model))),
        last_used: Instant::now(),
    };
    st.sessions.lock().expect("session map lock").insert(id.clone(), entry);
    (StatusCode::CREATED, Json(CreatedSession { session_id: id }))
}

async fn submit_turn(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<TurnRequest>, JsonRejection>,
) -> Result<Json<TurnResult>, ApiError> {
    let session = st.lookup(&id).ok_or_else(|| not_found(&id))?;
    let Json(req) = body.map_err(|r| ApiError(r.status(), r.body_text()))?;
    let mut s = session.lock().await;
    match s.submit(&st.model, &req.utterance) {
        Ok(r) => Ok(Json(r)),
        Err(Error::Data(msg)) => Err(ApiError(StatusCode::BAD_REQUEST, msg)),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Transcript>, ApiError> {
    let session = st.lookup(&id).ok_or_else(|| not_found(&id))?;
    let s = session.lock().await;
    Ok(Json(Transcript {
        session_id: id,
        turns: s.transcript.clone(),
    }))
}

async fn delete_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    st.expire(Instant::now());
    match st.sessions.lock().expect("session map lock").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(not_found(&id)),
    }
}

async fn get_model(State(st): State<Arc<AppState>>) -> Json<ModelInfo> {
    Json(model_info(&st.model))
}

async fn docs() -> Html<&'static str> {
    Html(API_DOCS)
}

/// Routes of the API, plus static files from `ui_dir` under `/` when given.
pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session).delete(delete_session))
        .route("/api/sessions/{id}/turns", post(submit_turn))
        .route("/api/model", get(get_model))
        .route("/api/docs", get(docs))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(model: Model<f32>, addr: SocketAddr, ui_dir: Option<PathBuf>, ttl: Duration) -> Result<(), Error> {
    let app = router(Arc::new(AppState::new(model, ttl)), ui_dir);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Config(format!("server error: {e}")))
}

const API_DOCS: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>API reference</title></head>
<body>
<h1>Dialogue manager API</h1>
<p>All bodies are JSON. Errors come back as <code>{"error": "..."}</code>.
Request bodies are limited to 8 KiB (413 beyond). Idle sessions expire.</p>
<h2>POST /api/sessions</h2>
<p>Creates a session. 201 with <code>{"session_id": "..."}</code>.</p>
<h2>POST /api/sessions/{id}/turns</h2>
<p>Body <code>{"utterance": "..."}</code>. Advances the model one turn and
returns a turn result: <code>turn</code>, <code>user</code>,
<code>system_prev</code> (the verbalized previous prediction),
<code>tokens</code>, <code>truncated</code>, <code>predicted_act</code>
(<code>act_type</code>, <code>slots</code>, <code>text</code>),
<code>alpha</code> (one row per slot over <code>tokens</code>),
<code>beta</code> (update gate per slot), <code>mask_probs</code>,
<code>da_type_dist</code>, <code>value_top</code> (three most probable values
per slot) and <code>read_weights</code>. 404 for an unknown session, 400 for
an empty utterance.</p>
<h2>GET /api/sessions/{id}</h2>
<p>Returns <code>{"session_id", "turns": [turn result, ...]}</code>.</p>
<h2>DELETE /api/sessions/{id}</h2>
<p>204 on success, 404 for an unknown session.</p>
<h2>GET /api/model</h2>
<p>Architecture label, slots with their values, act types, ontology hash and
dimensions.</p>
</body></html>
"#;
