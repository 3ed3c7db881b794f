//! REST and stream lifecycle against a recorded sample fixture.

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use classpulse_core::affect::VaRegressor;
use classpulse_core::engine::{EventEnvelope, SessionEvent, SessionMetrics, Suggestion};
use classpulse_core::mdp::MdpConfig;
use classpulse_core::simulator::{train_scenario_regressor, DynamicsPreset, ScenarioConfig};
use classpulse_service::store::{self, Store, StoreError};
use classpulse_service::{router, AppConfig, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const FIXTURE: &str = include_str!("fixtures/session.ndjson");
const CALIBRATION_END_MS: i64 = 60_000;

fn model() -> VaRegressor {
    static MODEL: OnceLock<VaRegressor> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let cfg = ScenarioConfig::new(3, 1.0, true, 0, DynamicsPreset::identity());
            train_scenario_regressor(&cfg, 7).unwrap()
        })
        .clone()
}

fn app_with(storage: Option<&std::path::Path>, token: Option<&str>) -> (Router, Arc<AppState>) {
    let mut cfg = AppConfig::new(model(), MdpConfig::default_config());
    cfg.storage = storage.map(Into::into);
    cfg.token = token.map(Into::into);
    cfg.heartbeat = Duration::from_millis(200);
    let state = AppState::new(cfg).unwrap();
    (router(state.clone()), state)
}

fn split_fixture() -> (String, String) {
    let (mut calib, mut live) = (String::new(), String::new());
    for line in FIXTURE.lines() {
        let ts = serde_json::from_str::<Value>(line).unwrap()["ts_ms"].as_i64().unwrap();
        let target = if ts < CALIBRATION_END_MS { &mut calib } else { &mut live };
        target.push_str(line);
        target.push('\n');
    }
    (calib, live)
}

async fn send(app: &Router, method: &str, uri: &str, body: impl Into<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.into()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn create(app: &Router, id: &str) {
    let body = json!({ "session_id": id, "roster": ["ana", "ben", "cho"] });
    let (status, v) = send(app, "POST", "/sessions", body.to_string()).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    assert_eq!(v["session_id"], id);
}

/// Parses complete `event:`/`data:` blocks from a server-sent event body.
fn parse_sse(text: &str) -> Vec<(String, Value)> {
    text.split("\n\n")
        .filter_map(|block| {
            let mut name = None;
            let mut data = String::new();
            for line in block.lines() {
                if let Some(n) = line.strip_prefix("event: ") {
                    name = Some(n.to_string());
                } else if let Some(d) = line.strip_prefix("data: ") {
                    data.push_str(d);
                }
            }
            Some((name?, serde_json::from_str(&data).ok()?))
        })
        .collect()
}

#[tokio::test]
async fn full_lifecycle_with_recorded_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app_with(Some(dir.path()), None);
    let (calib, live) = split_fixture();
    create(&app, "lecture-1").await;

    // Not calibrated yet: every student is listed.
    let (status, v) = send(&app, "POST", "/sessions/lecture-1/go-live", "").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["shortfall"].as_object().unwrap().len(), 3, "{v}");

    let (status, v) = send(&app, "POST", "/sessions/lecture-1/ingest", calib.clone()).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(v["accepted"], calib.lines().count());
    assert_eq!(v["rejected_count"], 0);

    let (status, v) = send(&app, "POST", "/sessions/lecture-1/go-live", "").await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let (status, _) = send(&app, "POST", "/sessions/lecture-1/go-live", "").await;
    assert_eq!(status, StatusCode::CONFLICT);

    // Subscribe before the live samples arrive.
    let req = Request::get("/sessions/lecture-1/stream").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();

    let (status, v) = send(&app, "POST", "/sessions/lecture-1/ingest", live.clone()).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(v["accepted"], live.lines().count());

    let (status, snap) = send(&app, "GET", "/sessions/lecture-1/state", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snap["status"], "live");
    assert!(snap["collective"]["collective"]["label"].is_string(), "{snap}");
    let ticks = snap["metrics"]["ticks"].as_u64().unwrap();
    assert!(ticks >= 8, "{ticks} ticks");

    let (status, v) = send(&app, "POST", "/sessions/lecture-1/action", json!({"action": "levitate"}).to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let (status, _) = send(&app, "POST", "/sessions/lecture-1/action", json!({"action": "no_change", "source": "maybe"}).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, v) = send(
        &app,
        "POST",
        "/sessions/lecture-1/action",
        json!({"action": "simplify_content", "source": "infeasible"}).to_string(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["infeasible"], json!(["simplify_content"]));
    let (status, _) = send(&app, "POST", "/sessions/lecture-1/action", json!({"action": "increase_pace", "source": "override"}).to_string()).await;
    assert_eq!(status, StatusCode::OK);
    let (status, v) = send(&app, "POST", "/sessions/lecture-1/intervention", json!({"kind": "pace"}).to_string()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["intervention_count"], 2);

    let (status, v) = send(&app, "POST", "/sessions/lecture-1/end", "").await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let (status, _) = send(&app, "POST", "/sessions/lecture-1/end", "").await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = send(&app, "POST", "/sessions/lecture-1/ingest", live.lines().last().unwrap().to_string()).await;
    assert_eq!(status, StatusCode::CONFLICT);

    // The stream closes after the session ends; collect everything it sent.
    let mut text = String::new();
    while let Ok(Some(frame)) = tokio::time::timeout(Duration::from_secs(5), body.frame()).await {
        if let Ok(data) = frame.unwrap().into_data() {
            text.push_str(std::str::from_utf8(&data).unwrap());
        }
    }
    let sse = parse_sse(&text);
    let states = sse.iter().filter(|(n, _)| n == "state").count() as u64;
    let streamed: Vec<Suggestion> = sse
        .iter()
        .filter(|(n, _)| n == "suggestion")
        .map(|(_, v)| serde_json::from_value(v.clone()).unwrap())
        .collect();

    // Persisted artifacts.
    let store = Store::new(dir.path()).unwrap();
    let stored = store.load("lecture-1").unwrap();
    assert_eq!(stored.record.session_id, "lecture-1");
    assert_eq!(stored.record.roster.len(), 3);
    assert_eq!(stored.replayed_metrics(), stored.metrics, "event replay reproduces metrics.json");
    assert_eq!(stored.metrics.intervention_count, 2);
    assert_eq!(stored.metrics.ticks, ticks);
    assert!(stored.calibration.students.len() == 3);

    // Every streamed state and suggestion came from the engine, in order.
    let logged: Vec<Suggestion> = stored
        .events
        .iter()
        .filter_map(|e| match &e.event {
            SessionEvent::Suggestion(s) => Some(s.clone()),
            _ => None,
        })
        .collect();
    assert!(!logged.is_empty());
    assert_eq!(streamed, logged);
    let labelled_ticks = stored
        .events
        .iter()
        .filter(|e| matches!(e.event, SessionEvent::Tick { collective: Some(_), .. }))
        .count() as u64;
    assert_eq!(states, labelled_ticks);
    assert!(states >= 8);

    // Ended sessions stay readable, also from a fresh process.
    let (fresh, _) = app_with(Some(dir.path()), None);
    let (status, snap) = send(&fresh, "GET", "/sessions/lecture-1/state", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snap["status"], "ended");
    assert_eq!(serde_json::from_value::<SessionMetrics>(snap["metrics"].clone()).unwrap(), stored.metrics);
    let (status, _) = send(&fresh, "POST", "/sessions", json!({"session_id": "lecture-1", "roster": ["x"]}).to_string()).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn partial_ingest_reports_rejected_lines() {
    let (app, _) = app_with(None, None);
    create(&app, "s1").await;
    let body = [
        r#"{"student_id":"ana","ts_ms":0,"channel":"hr","value":70}"#,
        r#"{"student_id":"ana","ts_ms":0,"channel":"hr","value":"fast"}"#,
        r#"{"student_id":"ben","ts_ms":0,"channel":"eda","value":2.5}"#,
    ]
    .join("\n");
    let (status, v) = send(&app, "POST", "/sessions/s1/ingest", body).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(v["accepted"], 2);
    assert_eq!(v["rejected_count"], 1);
    assert_eq!(v["rejected"][0]["line"], 2);
    assert_eq!(v["rejected"][0]["field"], "value");
    assert!(v["rejected"][0]["reason"].is_string());
}

#[tokio::test]
async fn request_errors() {
    let (app, _) = app_with(None, None);
    let (status, _) = send(&app, "GET", "/sessions/nope/state", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, "POST", "/sessions/nope/ingest", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, "POST", "/sessions", "{").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, "POST", "/sessions", json!({"roster": []}).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, "POST", "/sessions", json!({"roster": ["a", "a"]}).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, "POST", "/sessions", json!({"roster": ["a"], "model_id": "other"}).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, "POST", "/sessions", json!({"session_id": "../x", "roster": ["a"]}).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, v) = send(
        &app,
        "POST",
        "/sessions",
        json!({"roster": [{"student_id": "a", "weight": 2.0}, "b"], "preferences": {"a": {"pace_preference": "slow", "content_style": "illustrations"}}})
            .to_string(),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    let id = v["session_id"].as_str().unwrap();
    assert_eq!(id.len(), 36);
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let (app, _) = app_with(None, Some("s3cret"));
    let (status, _) = send(&app, "POST", "/sessions", json!({"roster": ["a"]}).to_string()).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let req = Request::post("/sessions")
        .header("content-type", "application/json")
        .header("authorization", "Bearer s3cret")
        .body(Body::from(json!({"roster": ["a"]}).to_string()))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::CREATED);
    let req = Request::get("/health").body(Body::empty()).unwrap();
    assert_eq!(app.oneshot(req).await.unwrap().status(), StatusCode::OK);
}

#[tokio::test]
async fn heartbeat_keeps_the_stream_alive() {
    let (app, _) = app_with(None, None);
    create(&app, "hb").await;
    let req = Request::get("/sessions/hb/stream").body(Body::empty()).unwrap();
    let mut body = app.clone().oneshot(req).await.unwrap().into_body();
    let frame = tokio::time::timeout(Duration::from_secs(5), body.frame()).await.unwrap().unwrap().unwrap();
    let text = String::from_utf8(frame.into_data().unwrap().to_vec()).unwrap();
    assert!(text.contains("event: heartbeat"), "{text}");
}

#[test]
fn truncated_log_names_the_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.ndjson");
    let ev = |seq| EventEnvelope {
        v: 1,
        seq,
        event: SessionEvent::WentLive { ts_ms: 5 },
    };
    let first = ev(0).to_line();
    let second = ev(1).to_line();
    std::fs::write(&path, format!("{first}\n{}", &second[..second.len() / 2])).unwrap();
    match store::read_events(&path) {
        Err(StoreError::TruncatedLog { offset, line, .. }) => {
            assert_eq!(offset, first.len() as u64 + 1);
            assert_eq!(line, 2);
        }
        other => panic!("expected truncation error, got {other:?}"),
    }
    let msg = store::read_events(&path).unwrap_err().to_string();
    assert!(msg.contains(&format!("byte offset {}", first.len() + 1)), "{msg}");

    std::fs::write(&path, format!("{first}\n{second}\n")).unwrap();
    assert_eq!(store::read_events(&path).unwrap().len(), 2);
}

#[test]
fn unknown_session_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::new(dir.path()).unwrap();
    assert!(matches!(store.load("ghost"), Err(StoreError::NotFound(id)) if id == "ghost"));
}
