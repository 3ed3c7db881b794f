//! HTTP front door for classroom sessions.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create, starts calibrating |
//! | POST | `/sessions/{id}/ingest` | NDJSON samples, 202 with a per-line report |
//! | POST | `/sessions/{id}/go-live` | 409 with the shortfall until calibrated |
//! | GET | `/sessions/{id}/state` | collective state, suggestion, metrics |
//! | POST | `/sessions/{id}/action` | teacher feedback |
//! | POST | `/sessions/{id}/intervention` | student-initiated adjustment |
//! | GET | `/sessions/{id}/stream` | server-sent events |
//! | POST | `/sessions/{id}/end` | closes and persists |

pub mod error;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use classpulse_core::affect::VaRegressor;
use classpulse_core::engine::{
    ActionSource, CollectiveState, EngineConfig, RosterEntry, Session, SessionEvent, SessionSnapshot, SessionStatus,
    StudentPreferences, Suggestion,
};
use classpulse_core::mdp::{solve, Action, ActionKind, MdpConfig, Policy};
use futures::stream::{self, Stream};
use parking_lot::{Mutex, RwLock};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;

pub use error::ApiError;
pub use store::{SessionRecord, Store, StoreError, StoredSession};

pub const DEFAULT_ID: &str = "default";

#[derive(Debug, Clone)]
pub struct AppConfig {
    /// Session artifacts are written here when set.
    pub storage: Option<PathBuf>,
    pub models: BTreeMap<String, Arc<VaRegressor>>,
    pub mdp_configs: BTreeMap<String, MdpConfig>,
    pub engine: EngineConfig,
    /// Static bearer token required on every request when set.
    pub token: Option<String>,
    pub heartbeat: Duration,
}

impl AppConfig {
    /// One model and one MDP configuration, both registered as `default`.
    pub fn new(model: VaRegressor, mdp: MdpConfig) -> Self {
        Self {
            storage: None,
            models: BTreeMap::from([(DEFAULT_ID.to_string(), Arc::new(model))]),
            mdp_configs: BTreeMap::from([(DEFAULT_ID.to_string(), mdp)]),
            engine: EngineConfig::default(),
            token: None,
            heartbeat: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone)]
enum StreamMessage {
    State(Arc<CollectiveState>),
    Suggestion(Suggestion),
    Closed,
}

struct Inner {
    session: Session,
    record: SessionRecord,
}

struct LiveSession {
    inner: Mutex<Inner>,
    tx: broadcast::Sender<StreamMessage>,
}

pub struct AppState {
    config: AppConfig,
    policies: BTreeMap<String, Policy>,
    store: Option<Store>,
    sessions: RwLock<HashMap<String, Arc<LiveSession>>>,
}

impl AppState {
    /// Solves every configured MDP and opens the storage root.
    pub fn new(config: AppConfig) -> Result<Arc<Self>, String> {
        let mut policies = BTreeMap::new();
        for (id, cfg) in &config.mdp_configs {
            let model = cfg.to_model().map_err(|e| format!("mdp config `{id}`: {e}"))?;
            let policy = solve(&model, &cfg.value_iteration).map_err(|e| format!("mdp config `{id}`: {e}"))?;
            policies.insert(id.clone(), policy);
        }
        let store = match &config.storage {
            Some(root) => Some(Store::new(root).map_err(|e| e.to_string())?),
            None => None,
        };
        Ok(Arc::new(Self {
            config,
            policies,
            store,
            sessions: RwLock::new(HashMap::new()),
        }))
    }

    pub fn store(&self) -> Option<&Store> {
        self.store.as_ref()
    }

    fn live(&self, id: &str) -> Option<Arc<LiveSession>> {
        self.sessions.read().get(id).cloned()
    }

    fn session(&self, id: &str) -> Result<Arc<LiveSession>, ApiError> {
        self.live(id).ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    /// Persists and publishes everything the engine logged since the last
    /// flush. Called with the session lock held so logs stay ordered.
    fn flush(&self, live: &LiveSession, inner: &mut Inner) -> Result<(), ApiError> {
        let events = inner.session.take_new_events();
        let mut states = inner.session.take_new_states().into_iter();
        if let Some(store) = &self.store {
            store.append_events(&inner.record.session_id, &events)?;
        }
        for env in &events {
            let msg = match &env.event {
                SessionEvent::Tick {
                    ts_ms,
                    collective: Some(_),
                    ..
                } => match states.next() {
                    Some((ts, state)) if ts == *ts_ms => StreamMessage::State(Arc::new(state)),
                    _ => continue,
                },
                SessionEvent::Suggestion(s) => StreamMessage::Suggestion(s.clone()),
                _ => continue,
            };
            // No subscribers is fine.
            let _ = live.tx.send(msg);
        }
        Ok(())
    }

    fn persist_state(&self, inner: &Inner) -> Result<(), ApiError> {
        if let Some(store) = &self.store {
            let s = &inner.session;
            store.write_state(&inner.record, s.calibration(), s.metrics(), s.transitions())?;
        }
        Ok(())
    }
}

fn unix_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v).map_err(|e| ApiError::BadRequest(e.body_text()))
}

fn optional_body(body: &str) -> Result<Value, ApiError> {
    if body.trim().is_empty() {
        return Ok(json!({}));
    }
    serde_json::from_str(body).map_err(|e| ApiError::BadRequest(format!("invalid JSON body: {e}")))
}

fn ts_field(body: &Value) -> Result<Option<i64>, ApiError> {
    match body.get("ts_ms") {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_i64()
            .map(Some)
            .ok_or_else(|| ApiError::BadRequest("field `ts_ms`: expected integer".into())),
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RosterItem {
    Id(String),
    Entry(RosterEntry),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    session_id: Option<String>,
    roster: Vec<RosterItem>,
    /// Questionnaire answers by student id; overrides roster entries.
    #[serde(default)]
    preferences: BTreeMap<String, StudentPreferences>,
    #[serde(default)]
    model_id: Option<String>,
    #[serde(default)]
    mdp_config_id: Option<String>,
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = json_body(body)?;
    let session_id = req.session_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    if !valid_id(&session_id) {
        return Err(ApiError::BadRequest(format!("field `session_id`: invalid id `{session_id}`")));
    }
    let model_id = req.model_id.unwrap_or_else(|| DEFAULT_ID.into());
    let mdp_config_id = req.mdp_config_id.unwrap_or_else(|| DEFAULT_ID.into());
    let model = app
        .config
        .models
        .get(&model_id)
        .cloned()
        .ok_or_else(|| ApiError::BadRequest(format!("field `model_id`: unknown model `{model_id}`")))?;
    let policy = app
        .policies
        .get(&mdp_config_id)
        .ok_or_else(|| ApiError::BadRequest(format!("field `mdp_config_id`: unknown config `{mdp_config_id}`")))?;

    let mut roster: Vec<RosterEntry> = req
        .roster
        .into_iter()
        .map(|item| match item {
            RosterItem::Id(id) => RosterEntry::new(id),
            RosterItem::Entry(e) => e,
        })
        .collect();
    for (student, prefs) in &req.preferences {
        let entry = roster
            .iter_mut()
            .find(|e| &e.student_id == student)
            .ok_or_else(|| ApiError::BadRequest(format!("field `preferences`: `{student}` is not on the roster")))?;
        entry.preferences = *prefs;
    }

    let session = Session::new(session_id.clone(), app.config.engine.clone(), roster.clone(), model, policy, 0)?;
    let record = SessionRecord {
        session_id: session_id.clone(),
        status: SessionStatus::Calibrating,
        roster,
        model_id,
        mdp_config_id,
        engine: app.config.engine.clone(),
        created_unix_ms: unix_ms(),
        ended_unix_ms: None,
    };
    let (tx, _) = broadcast::channel(256);
    let live = Arc::new(LiveSession {
        inner: Mutex::new(Inner { session, record }),
        tx,
    });
    {
        let mut sessions = app.sessions.write();
        let on_disk = app.store.as_ref().is_some_and(|s| s.exists(&session_id));
        if sessions.contains_key(&session_id) || on_disk {
            return Err(ApiError::Conflict(format!("session `{session_id}` already exists")));
        }
        if let Some(store) = &app.store {
            store.create(&live.inner.lock().record)?;
        }
        sessions.insert(session_id.clone(), live.clone());
    }
    {
        let mut inner = live.inner.lock();
        app.flush(&live, &mut inner)?;
    }
    tracing::info!(session_id, "session created");
    Ok((StatusCode::CREATED, Json(json!({ "session_id": session_id, "status": "calibrating" }))).into_response())
}

async fn ingest(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> Result<Response, ApiError> {
    let live = app.session(&id)?;
    let mut inner = live.inner.lock();
    let report = inner.session.ingest_ndjson(&body)?;
    app.flush(&live, &mut inner)?;
    Ok((StatusCode::ACCEPTED, Json(report)).into_response())
}

async fn go_live(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> Result<Response, ApiError> {
    let body = optional_body(&body)?;
    let live = app.session(&id)?;
    let mut inner = live.inner.lock();
    let now = ts_field(&body)?.or(inner.session.clock_ms()).unwrap_or(0);
    inner.session.go_live(now)?;
    inner.record.status = SessionStatus::Live;
    app.flush(&live, &mut inner)?;
    app.persist_state(&inner)?;
    Ok(Json(json!({ "session_id": id, "status": "live", "ts_ms": now })).into_response())
}

/// Read-only view of a session that only exists on disk.
fn stored_snapshot(stored: &StoredSession) -> SessionSnapshot {
    let mut suggestion = None;
    let mut infeasible = std::collections::BTreeSet::new();
    for env in &stored.events {
        match &env.event {
            SessionEvent::Suggestion(s) => suggestion = Some(s.clone()),
            SessionEvent::Action { action, source, .. } => match source {
                ActionSource::Infeasible => {
                    infeasible.insert(*action);
                }
                _ => {
                    infeasible.remove(action);
                }
            },
            _ => {}
        }
    }
    SessionSnapshot {
        session_id: stored.record.session_id.clone(),
        status: stored.record.status,
        clock_ms: stored.metrics.last_event_ms,
        collective: None,
        suggestion,
        infeasible,
        metrics: stored.metrics.clone(),
    }
}

async fn state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    if let Some(live) = app.live(&id) {
        let snapshot = live.inner.lock().session.snapshot();
        return Ok(Json(snapshot).into_response());
    }
    match &app.store {
        Some(store) if valid_id(&id) => Ok(Json(stored_snapshot(&store.load(&id)?)).into_response()),
        _ => Err(ApiError::NotFound(id)),
    }
}

async fn action(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> Result<Response, ApiError> {
    let body = optional_body(&body)?;
    let name = body
        .get("action")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::BadRequest("field `action`: expected string".into()))?;
    let action = Action::parse(name).ok_or_else(|| ApiError::Unprocessable(format!("unknown action `{name}`")))?;
    let source: ActionSource = match body.get("source") {
        None => ActionSource::Applied,
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|_| ApiError::BadRequest("field `source`: expected applied, override or infeasible".into()))?,
    };
    let live = app.session(&id)?;
    let mut inner = live.inner.lock();
    let now = ts_field(&body)?.or(inner.session.clock_ms()).unwrap_or(0);
    inner.session.apply_action(action, source, now)?;
    app.flush(&live, &mut inner)?;
    let infeasible: Vec<Action> = inner.session.infeasible().iter().copied().collect();
    Ok(Json(json!({ "action": action, "source": source, "ts_ms": now, "infeasible": infeasible })).into_response())
}

async fn intervention(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: String,
) -> Result<Response, ApiError> {
    let body = optional_body(&body)?;
    let kind: ActionKind = body
        .get("kind")
        .cloned()
        .and_then(|v| serde_json::from_value(v).ok())
        .ok_or_else(|| ApiError::BadRequest("field `kind`: expected pace or content".into()))?;
    let live = app.session(&id)?;
    let mut inner = live.inner.lock();
    let now = ts_field(&body)?.or(inner.session.clock_ms()).unwrap_or(0);
    let metrics = inner.session.record_intervention(kind, now)?;
    let out = json!({
        "intervention_count": metrics.intervention_count,
        "interventions_per_minute": metrics.interventions_per_minute(),
    });
    app.flush(&live, &mut inner)?;
    Ok(Json(out).into_response())
}

async fn end(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> Result<Response, ApiError> {
    let body = optional_body(&body)?;
    let live = app.session(&id)?;
    let mut inner = live.inner.lock();
    let now = ts_field(&body)?.or(inner.session.clock_ms()).unwrap_or(0);
    inner.session.end(now)?;
    inner.record.status = SessionStatus::Ended;
    inner.record.ended_unix_ms = Some(unix_ms());
    app.flush(&live, &mut inner)?;
    app.persist_state(&inner)?;
    let _ = live.tx.send(StreamMessage::Closed);
    let metrics = inner.session.metrics();
    tracing::info!(session_id = id, ticks = metrics.ticks, "session ended");
    Ok(Json(json!({ "session_id": id, "status": "ended", "ts_ms": now, "metrics": metrics })).into_response())
}

fn event_stream(
    rx: broadcast::Receiver<StreamMessage>,
    heartbeat: Duration,
) -> impl Stream<Item = Result<Event, Infallible>> {
    let ticker = tokio::time::interval_at(tokio::time::Instant::now() + heartbeat, heartbeat);
    stream::unfold((rx, ticker), |(mut rx, mut ticker)| async move {
        loop {
            let event = tokio::select! {
                msg = rx.recv() => match msg {
                    Ok(StreamMessage::State(s)) => Event::default().event("state").json_data(&*s),
                    Ok(StreamMessage::Suggestion(s)) => Event::default().event("suggestion").json_data(&s),
                    Ok(StreamMessage::Closed) | Err(broadcast::error::RecvError::Closed) => return None,
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        tracing::warn!(skipped = n, "stream subscriber lagged");
                        continue;
                    }
                },
                _ = ticker.tick() => Event::default().event("heartbeat").json_data(json!({ "unix_ms": unix_ms() })),
            };
            let event = event.expect("stream payloads serialize");
            return Some((Ok(event), (rx, ticker)));
        }
    })
}

async fn stream_events(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let live = app.session(&id)?;
    let rx = {
        let inner = live.inner.lock();
        if inner.session.status() == SessionStatus::Ended {
            return Err(ApiError::Conflict(format!("session `{id}` has ended")));
        }
        live.tx.subscribe()
    };
    Ok(Sse::new(event_stream(rx, app.config.heartbeat)).into_response())
}

async fn require_token(State(app): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.config.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/ingest", post(ingest))
        .route("/sessions/{id}/go-live", post(go_live))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/action", post(action))
        .route("/sessions/{id}/intervention", post(intervention))
        .route("/sessions/{id}/stream", get(stream_events))
        .route("/sessions/{id}/end", post(end))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token))
        .route("/health", get(|| async { "ok" }))
        .with_state(app)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await
}
