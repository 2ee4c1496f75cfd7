use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use facetalk::{engine_from, http::router};
use facetalk_core::{EngineConfig, MemoryStore, SessionManager};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn ui_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("ui")
}

fn app(ui: Option<PathBuf>) -> Router {
    let f = fixtures();
    let engine = engine_from(
        &f.join("schema.json"),
        &f.join("lexicon.json"),
        &f.join("catalog.json"),
        EngineConfig::default(),
    )
    .unwrap();
    let sessions = SessionManager::new(engine, Arc::new(MemoryStore::new()), 11);
    let schema = std::fs::read_to_string(f.join("schema.json")).unwrap();
    router(Arc::new(sessions), schema, ui)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_owned())))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (
        status,
        res.into_body().collect().await.unwrap().to_bytes().to_vec(),
    )
}

async fn json_call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let body = body.map(|b| b.to_string());
    let (status, bytes) = call(app, method, uri, body.as_deref()).await;
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let (status, body) = json_call(app, "POST", "/v1/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    body["session_id"].as_str().unwrap().to_owned()
}

async fn say(app: &Router, id: &str, text: &str) -> Value {
    let (status, body) = json_call(
        app,
        "POST",
        &format!("/v1/sessions/{id}/utterances"),
        Some(json!({"text": text})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body
}

async fn state(app: &Router, id: &str) -> Value {
    let (status, body) = json_call(app, "GET", &format!("/v1/sessions/{id}/state"), None).await;
    assert_eq!(status, StatusCode::OK);
    body
}

#[tokio::test]
async fn turn_response_shape() {
    let app = app(None);
    let id = new_session(&app).await;
    let turn = say(&app, &id, "show me red nike shoes").await;
    for key in [
        "session_id",
        "turn",
        "intents",
        "dialog_act",
        "state_summary",
        "products",
        "prompt",
        "events",
    ] {
        assert!(turn.get(key).is_some(), "missing {key}");
    }
    assert_eq!(turn["session_id"], id.as_str());
    assert_eq!(turn["turn"], 1);
    let view = state(&app, &id).await;
    assert_eq!(view["state"]["category"], "shoes");
    assert_eq!(
        view["state"]["facets"]["brand"]["positive"][0]["value"]["tag"]["tag"],
        "nike"
    );
    assert_eq!(
        view["state"]["facets"]["color"]["positive"][0]["value"]["tag"]["tag"],
        "red"
    );
    assert_eq!(view["summary"], turn["state_summary"]);
}

#[tokio::test]
async fn chip_removal_utterances_clear_predicates() {
    let app = app(None);
    let id = new_session(&app).await;
    say(&app, &id, "red nike shoes under $80").await;
    assert!(state(&app, &id).await["summary"]
        .as_str()
        .unwrap()
        .contains("red"));
    say(&app, &id, "i don't care if it's red or not").await;
    let view = state(&app, &id).await;
    assert!(!view["summary"].as_str().unwrap().contains("red"));
    assert!(view["state"]["facets"]["price"]["range"].is_object());
    say(&app, &id, "any price").await;
    let view = state(&app, &id).await;
    assert!(view["state"]["facets"].get("price").is_none());
    say(&app, &id, "i don't care if it's nike or not").await;
    assert_eq!(state(&app, &id).await["summary"], "shoes");
}

#[tokio::test]
async fn errors_carry_code_and_message() {
    let app = app(None);
    let (status, body) = json_call(&app, "GET", "/v1/sessions/s-missing/state", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "NOT_FOUND");
    assert!(body["message"].is_string());

    let id = new_session(&app).await;
    let (status, bytes) = call(
        &app,
        "POST",
        &format!("/v1/sessions/{id}/utterances"),
        Some("{not json"),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(
        serde_json::from_slice::<Value>(&bytes).unwrap()["code"],
        "BAD_REQUEST"
    );

    let long = vec!["red"; 513].join(" ");
    let (status, body) = json_call(
        &app,
        "POST",
        &format!("/v1/sessions/{id}/utterances"),
        Some(json!({"text": long})),
    )
    .await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(body["code"], "UTTERANCE_TOO_LONG");

    let (status, body) = json_call(&app, "GET", "/v1/nothing-here", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "NOT_FOUND");
}

#[tokio::test]
async fn delete_then_gone() {
    let app = app(None);
    let id = new_session(&app).await;
    let (status, _) = call(&app, "DELETE", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, body) = json_call(
        &app,
        "POST",
        &format!("/v1/sessions/{id}/utterances"),
        Some(json!({"text": "red"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "NOT_FOUND");
    let (status, _) = call(&app, "DELETE", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn zero_results_event_in_turn() {
    let app = app(None);
    let id = new_session(&app).await;
    say(&app, &id, "nike shoes").await;
    let turn = say(&app, &id, "under $5").await;
    assert!(turn["products"].as_array().unwrap().is_empty());
    assert!(turn["events"]
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e["kind"] == "ZERO_RESULTS"));
}

#[tokio::test]
async fn schema_is_served_for_labels() {
    let app = app(None);
    let (status, body) = json_call(&app, "GET", "/v1/schema", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["categories"]
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c["id"] == "shoes"));
}

#[tokio::test]
async fn ui_dir_is_served() {
    let app = app(Some(ui_dir()));
    let (status, body) = call(&app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    let html = String::from_utf8(body).unwrap();
    assert!(html.contains("app.js"));
    for asset in ["/app.js", "/style.css", "/index.html"] {
        let (status, body) = call(&app, "GET", asset, None).await;
        assert_eq!(status, StatusCode::OK, "{asset}");
        assert!(!body.is_empty());
    }
    let (status, _) = call(&app, "GET", "/missing.txt", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = json_call(&app, "POST", "/v1/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
}

#[tokio::test]
async fn ui_assets_only_use_documented_routes() {
    let js = std::fs::read_to_string(ui_dir().join("app.js")).unwrap();
    for route in ["/v1/sessions", "/utterances", "/state", "/v1/schema"] {
        assert!(js.contains(route), "{route}");
    }
}

#[tokio::test]
async fn without_ui_dir_root_is_not_found() {
    let app = app(None);
    let (status, _) = call(&app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
