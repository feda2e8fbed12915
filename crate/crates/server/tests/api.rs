use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use futures::StreamExt;
use http_body_util::BodyExt;
use marge_core::adventure::{seed_catalog, GameError};
use marge_core::store::DocumentStore;
use marge_server::error::game_status;
use marge_server::{router, AppState, ServerConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

const UUID: &str = "f7826da64fa24e988024bc5b71e0893e";

fn app_with(store: DocumentStore) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(Arc::new(seed_catalog()), store).unwrap());
    (router(Arc::clone(&state)), state)
}

fn app() -> Router {
    app_with(DocumentStore::in_memory()).0
}

async fn call(app: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

async fn register(app: &Router, login: &str) -> (String, String) {
    let (s, v) = call(app, Method::POST, "/auth/register", None, Some(json!({"login": login, "password": "pw", "language": "pt"}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    (v["user_id"].as_str().unwrap().into(), v["token"].as_str().unwrap().into())
}

async fn start(app: &Router, token: &str, adventure: &str) -> String {
    let (s, v) = call(app, Method::POST, "/sessions", Some(token), Some(json!({"adventure_id": adventure}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["outcome"], "new");
    v["session"]["session_id"].as_str().unwrap().into()
}

fn gate_scan(t0: u64, n: u64) -> Value {
    let events: Vec<Value> = (0..n)
        .map(|i| json!({"t_ms": t0 + i * 7_000, "uuid": UUID, "major": 100, "minor": 1, "rssi": -62}))
        .collect();
    json!({ "events": events })
}

async fn advance(app: &Router, token: &str, sid: &str, input: &str) -> (StatusCode, Value) {
    call(app, Method::POST, &format!("/sessions/{sid}/advance"), Some(token), Some(json!({"input": input}))).await
}

async fn answer(app: &Router, token: &str, sid: &str, q: usize, c: usize) -> Value {
    let (s, v) = call(app, Method::POST, &format!("/sessions/{sid}/answer"), Some(token), Some(json!({"question_index": q, "choice_index": c}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

#[tokio::test]
async fn catalog_localizes_and_rejects_unknown_language() {
    let app = app();
    let (s, v) = call(&app, Method::GET, "/catalog?lang=pt", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["language"], "pt");
    assert_eq!(v["adventures"].as_array().unwrap().len(), 2);
    let (s, v) = call(&app, Method::GET, "/catalog?lang=xx", None, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "UnknownLanguage");
    assert!(v["message"].is_string());
}

#[tokio::test]
async fn auth_flow_and_error_shapes() {
    let app = app();
    let (uid, _) = register(&app, "ana").await;
    let (s, v) = call(&app, Method::POST, "/auth/register", None, Some(json!({"login": "ana", "password": "x"}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("DuplicateLogin")));
    let (s, v) = call(&app, Method::POST, "/auth/login", None, Some(json!({"login": "ana", "password": "pw"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["user_id"], uid.as_str());
    let (s, v) = call(&app, Method::POST, "/auth/login", None, Some(json!({"login": "ana", "password": "nope"}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("Unauthorized")));
    let (s, v) = call(&app, Method::POST, "/auth/forgot-password", None, Some(json!({}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_IMPLEMENTED, Some("NotImplemented")));
    let (s, _) = call(&app, Method::GET, &format!("/users/{uid}/progress"), None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, v) = call(&app, Method::GET, "/nowhere", None, None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("NotFound")));

    let req = Request::post("/auth/login").body(Body::from(r#"{"login":"ana","password":"pw"}"#)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (s, v) = call(&app, Method::POST, "/auth/login", None, Some(json!({"login": 3}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidBody")));
    let (s, v) = call(&app, Method::POST, "/auth/register", None, Some(json!({"login": "b", "password": "p", "language": "es"}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("UnknownLanguage")));
}

#[tokio::test]
async fn full_playthrough_updates_progress_and_leaderboard() {
    let app = app();
    let (uid, token) = register(&app, "ana").await;
    let sid = start(&app, &token, "ribeira-quest").await;

    assert_eq!(advance(&app, &token, &sid, "ack").await.0, StatusCode::OK);
    let (s, v) = advance(&app, &token, &sid, "gate").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("GateLocked")));

    let (s, v) = call(&app, Method::POST, &format!("/sessions/{sid}/scan-events"), Some(&token), Some(gate_scan(1_000, 5))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["accepted"], 5);
    assert_eq!(v["gate_unlocked"], true);
    let (s, v) = advance(&app, &token, &sid, "gate").await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["stage"]["type"], "quiz");

    let wrong = answer(&app, &token, &sid, 0, 0).await;
    assert_eq!((wrong["correct"].as_bool(), wrong["score"].as_u64(), wrong["correct_index"].as_u64()), (Some(false), Some(0), Some(1)));
    assert_eq!(answer(&app, &token, &sid, 1, 0).await["score"], 10);
    assert_eq!(answer(&app, &token, &sid, 2, 1).await["score"], 20);
    assert_eq!(advance(&app, &token, &sid, "quiz").await.0, StatusCode::OK);
    let (s, v) = advance(&app, &token, &sid, "ack").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["session"]["status"], "complete");

    let (_, p) = call(&app, Method::GET, &format!("/users/{uid}/progress"), Some(&token), None).await;
    assert_eq!(p["total_points"], 120);
    assert_eq!(p["completed"], 1);
    assert_eq!(p["percentage"], 50);
    let earned: Vec<&str> = p["badges"].as_array().unwrap().iter().filter(|b| b["earned"] == true).map(|b| b["badge_id"].as_str().unwrap()).collect();
    assert_eq!(earned, ["ribeira-explorer"]);

    let (_, lb) = call(&app, Method::GET, "/leaderboard?n=5", None, None).await;
    assert_eq!(lb["entries"][0]["user_id"], uid.as_str());
    assert_eq!(lb["entries"][0]["total_points"], 120);

    // Starting again offers other adventures; replay earns nothing.
    let (s, v) = call(&app, Method::POST, "/sessions", Some(&token), Some(json!({"adventure_id": "ribeira-quest"}))).await;
    assert_eq!((s, v["outcome"].as_str()), (StatusCode::OK, Some("completed_prompt")));
    let (s, v) = call(&app, Method::POST, "/sessions", Some(&token), Some(json!({"adventure_id": "ribeira-quest", "replay": true}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
}

#[tokio::test]
async fn out_of_order_batch_is_rejected_atomically() {
    let app = app();
    let (_, token) = register(&app, "ana").await;
    let sid = start(&app, &token, "ribeira-quest").await;
    let uri = format!("/sessions/{sid}/scan-events");
    assert_eq!(call(&app, Method::POST, &uri, Some(&token), Some(gate_scan(10_000, 1))).await.0, StatusCode::OK);
    let mut bad = gate_scan(20_000, 3);
    bad["events"][2]["t_ms"] = json!(5);
    let (s, v) = call(&app, Method::POST, &uri, Some(&token), Some(bad)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("OutOfOrderEvent")));
    // Nothing from the rejected batch was applied: t = 11_000 is still in order.
    let (s, _) = call(&app, Method::POST, &uri, Some(&token), Some(gate_scan(11_000, 1))).await;
    assert_eq!(s, StatusCode::OK);
    let mut bad_rssi = gate_scan(12_000, 1);
    bad_rssi["events"][0]["rssi"] = json!(5);
    assert_eq!(call(&app, Method::POST, &uri, Some(&token), Some(bad_rssi)).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn sessions_are_private() {
    let app = app();
    let (_, ana) = register(&app, "ana").await;
    let (bruno_id, bruno) = register(&app, "bruno").await;
    let sid = start(&app, &ana, "ribeira-quest").await;
    let (s, v) = call(&app, Method::GET, &format!("/sessions/{sid}"), Some(&bruno), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::FORBIDDEN, Some("Forbidden")));
    let (s, _) = call(&app, Method::GET, &format!("/users/{bruno_id}/progress"), Some(&ana), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, v) = call(&app, Method::GET, "/sessions/nope", Some(&ana), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownSession")));
}

#[tokio::test]
async fn feedback_language_and_eggs() {
    let app = app();
    let (uid, token) = register(&app, "ana").await;
    let (s, v) = call(&app, Method::POST, &format!("/users/{uid}/feedback"), Some(&token), Some(json!({"text": "Great ride"}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let (s, v) = call(&app, Method::POST, &format!("/users/{uid}/feedback"), Some(&token), Some(json!({"text": "  "}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("EmptyFeedback")));
    let (s, v) = call(&app, Method::PUT, &format!("/users/{uid}/language"), Some(&token), Some(json!({"language": "de"}))).await;
    assert_eq!((s, v["language"].as_str()), (StatusCode::OK, Some("de")));
    let (s, v) = call(&app, Method::POST, "/easter-eggs/splash-logo/trigger", Some(&token), None).await;
    assert_eq!((s, v["outcome"].as_str()), (StatusCode::OK, Some("granted")));
    let (_, v) = call(&app, Method::POST, "/easter-eggs/splash-logo/trigger", Some(&token), None).await;
    assert_eq!(v["outcome"], "already_found");
    let (s, v) = call(&app, Method::POST, "/easter-eggs/nope/trigger", Some(&token), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownEgg")));
    let (_, v) = call(&app, Method::GET, &format!("/users/{uid}"), Some(&token), None).await;
    assert_eq!(v["total_points"], 25);
}

async fn next_messages(body: &mut axum::body::BodyDataStream, want: usize) -> Vec<(String, Value)> {
    let mut buf = String::new();
    let mut out = Vec::new();
    while out.len() < want {
        let chunk = tokio::time::timeout(Duration::from_secs(5), body.next())
            .await
            .expect("stream stalled")
            .expect("stream ended")
            .unwrap();
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let frame: String = buf.drain(..end + 2).collect();
            let mut event = String::new();
            let mut data = String::new();
            for line in frame.lines() {
                if let Some(e) = line.strip_prefix("event:") {
                    event = e.trim().into();
                } else if let Some(d) = line.strip_prefix("data:") {
                    data.push_str(d.trim_start());
                }
            }
            if !data.is_empty() {
                out.push((event, serde_json::from_str(&data).unwrap()));
            }
        }
    }
    out
}

#[tokio::test]
async fn event_stream_reports_each_change_in_order() {
    let app = app();
    let (_, token) = register(&app, "ana").await;
    let sid = start(&app, &token, "ribeira-quest").await;
    let req = Request::get(format!("/sessions/{sid}/events?token={token}")).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "text/event-stream");
    let mut body = resp.into_body().into_data_stream();

    advance(&app, &token, &sid, "ack").await;
    let m = next_messages(&mut body, 2).await;
    assert_eq!(m[0].0, "stage_entered");
    assert_eq!((m[1].0.as_str(), m[1].1["unlocked"].as_bool()), ("gate_status", Some(false)));

    call(&app, Method::POST, &format!("/sessions/{sid}/scan-events"), Some(&token), Some(gate_scan(0, 2))).await;
    let m = next_messages(&mut body, 2).await;
    assert_eq!(m[0].0, "region_entered");
    assert_eq!((m[1].0.as_str(), m[1].1["unlocked"].as_bool()), ("gate_status", Some(true)));

    advance(&app, &token, &sid, "gate").await;
    assert_eq!(next_messages(&mut body, 1).await[0].0, "stage_entered");
    for (q, c) in [(0, 1), (1, 0), (2, 1)] {
        answer(&app, &token, &sid, q, c).await;
        let m = next_messages(&mut body, 1).await;
        assert_eq!(m[0].0, "score_changed");
        assert_eq!(m[0].1["delta"], 10);
    }
    advance(&app, &token, &sid, "quiz").await;
    assert_eq!(next_messages(&mut body, 1).await[0].0, "stage_entered");
    advance(&app, &token, &sid, "ack").await;
    let kinds: Vec<String> = next_messages(&mut body, 5).await.into_iter().map(|(k, _)| k).collect();
    assert_eq!(kinds, ["badge_granted", "badge_granted", "points_awarded", "points_awarded", "session_completed"]);
}

#[tokio::test]
async fn restart_against_same_data_dir_loses_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (uid, token, sid) = {
        let (app, _) = app_with(DocumentStore::open(dir.path()).unwrap());
        let (uid, token) = register(&app, "ana").await;
        let sid = start(&app, &token, "ribeira-quest").await;
        advance(&app, &token, &sid, "ack").await;
        call(&app, Method::POST, &format!("/sessions/{sid}/scan-events"), Some(&token), Some(gate_scan(0, 3))).await;
        call(&app, Method::POST, "/easter-eggs/splash-logo/trigger", Some(&token), None).await;
        call(&app, Method::POST, &format!("/users/{uid}/feedback"), Some(&token), Some(json!({"text": "ok"}))).await;
        (uid, token, sid)
    };
    let (app, state) = app_with(DocumentStore::open(dir.path()).unwrap());
    let (s, v) = call(&app, Method::GET, &format!("/sessions/{sid}"), Some(&token), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["session"]["stage_index"], 1);
    assert_eq!(v["gate_unlocked"], true);
    assert_eq!(advance(&app, &token, &sid, "gate").await.0, StatusCode::OK);
    let (_, u) = call(&app, Method::GET, &format!("/users/{uid}"), Some(&token), None).await;
    assert_eq!((u["total_points"].as_u64(), u["language"].as_str()), (Some(25), Some("pt")));
    assert_eq!(state.with_engine(|e, _| Ok(e.game.feedback(&uid).len())).unwrap(), 1);
    let (s, _) = call(&app, Method::POST, "/auth/login", None, Some(json!({"login": "ana", "password": "pw"}))).await;
    assert_eq!(s, StatusCode::OK);
}

#[test]
fn every_engine_error_maps_to_a_client_status() {
    let all = [
        GameError::Validation(vec![]),
        GameError::UnknownLanguage("x".into()),
        GameError::UnknownAdventure("x".into()),
        GameError::UnavailableAdventure("x".into()),
        GameError::UnknownSession("x".into()),
        GameError::UnknownUser("x".into()),
        GameError::DuplicateUser("x".into()),
        GameError::UnknownEgg("x".into()),
        GameError::SessionComplete,
        GameError::NotCompleted("x".into()),
        GameError::GateLocked,
        GameError::WrongInputKind { expected: "ack", got: "gate" },
        GameError::IncompleteQuiz { answered: 1, total: 3 },
        GameError::AlreadyAnswered(0),
        GameError::NotAQuizStage,
        GameError::IndexOutOfRange { index: 9, len: 3 },
        GameError::EmptyFeedback,
        GameError::TooLong(5000),
        GameError::InvalidArgument("x".into()),
    ];
    let mut codes = std::collections::BTreeSet::new();
    for e in all {
        let s = game_status(&e);
        assert!(s.is_client_error(), "{e:?} -> {s}");
        assert!(codes.insert(e.code()), "duplicate code {}", e.code());
    }
    assert_eq!(game_status(&GameError::GateLocked), StatusCode::CONFLICT);
}

#[test]
fn environment_overrides_flags() {
    let base = ServerConfig {
        port: 9000,
        ..ServerConfig::default()
    };
    let cfg = base
        .clone()
        .with_env_overrides(|k| match k {
            "MARGE_PORT" => Some("9100".into()),
            "MARGE_DATA_DIR" => Some("/tmp/x".into()),
            _ => None,
        })
        .unwrap();
    assert_eq!(cfg.port, 9100);
    assert_eq!(cfg.data_dir.as_deref(), Some(std::path::Path::new("/tmp/x")));
    assert_eq!(base.clone().with_env_overrides(|_| None).unwrap(), base);
    assert!(base.with_env_overrides(|k| (k == "MARGE_PORT").then(|| "http".into())).is_err());
}
