mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use stylechat_core::garment::{measure_svg, Attr};
use stylechat_gateway::config::ServiceConfig;
use stylechat_gateway::http::router;
use stylechat_gateway::pipeline::Models;
use stylechat_gateway::service::AppState;
use tower::ServiceExt;

fn app() -> (Router, Arc<AppState>) {
    let models = (*common::small_models()).clone();
    let state = Arc::new(AppState::new(models, 6, None));
    (router(state.clone(), None), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn chat(app: &Router, session: Option<&str>, text: &str) -> Value {
    let mut body = json!({ "text": text });
    if let Some(s) = session {
        body["session_id"] = json!(s);
    }
    let (status, v) = call(app, "POST", "/api/chat", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v
}

/// Chats up to the editor and returns the session id.
async fn open_editor(app: &Router) -> (String, Value) {
    let first = chat(app, None, "I want a dress").await;
    let id = first["session_id"].as_str().unwrap().to_string();
    chat(app, Some(&id), "red please").await;
    chat(app, Some(&id), "long sleeves please").await;
    let v = chat(app, Some(&id), "the second one").await;
    assert_eq!(v["phase"], "DESIGNING", "{v}");
    (id, v)
}

fn assert_envelope(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()), "{v}");
}

#[tokio::test]
async fn health_reports_the_attribute_schema() {
    let (app, _) = app();
    let (status, v) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["attribute_count"], 6);
    let names: Vec<&str> = v["attributes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ServiceConfig::default().attributes);
    assert_eq!(v["items"], 600);
}

#[tokio::test]
async fn chat_creates_sessions_and_rejects_bad_input() {
    let (app, _) = app();
    let v = chat(&app, None, "hello there").await;
    assert!(!v["session_id"].as_str().unwrap().is_empty());
    assert_eq!(v["phase"], "START");

    let (status, v) = call(&app, "POST", "/api/chat", Some(json!({ "text": "   " }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_envelope(&v, "bad_request");

    let req = Request::builder()
        .method("POST")
        .uri("/api/chat")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let (status, v) = call(&app, "GET", "/api/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_envelope(&v, "not_found");
}

#[tokio::test]
async fn scripted_conversation_confirms_over_five_posts() {
    let (app, state) = app();
    let before = state.index_len();
    let (id, _) = open_editor(&app).await;
    let v = chat(&app, Some(&id), "yes, confirm the design").await;
    assert_eq!(v["phase"], "CONFIRMED", "{v}");
    assert_eq!(v["actions"], json!(["CONFIRM_DESIGN"]));
    assert!(v["design"]["committed_id"].as_u64().is_some(), "{v}");
    // Confirming in chat commits the design.
    assert_eq!(state.index_len(), before + 1);
}

#[tokio::test]
async fn chat_turns_carry_actions_and_cards() {
    let (app, _) = app();
    let v = chat(&app, None, "I want a dress").await;
    assert_eq!(v["phase"], "ELICITING");
    assert_eq!(v["actions"], json!(["ASK_SLOT(color)"]));
    let id = v["session_id"].as_str().unwrap();
    chat(&app, Some(id), "red please").await;
    let v = chat(&app, Some(id), "long sleeves please").await;
    assert_eq!(v["phase"], "SUGGESTING");
    assert_eq!(v["actions"], json!(["SHOW_RESULTS"]));
    let items = v["items"].as_array().unwrap();
    assert_eq!(items.len(), 6);
    for item in items {
        assert!(item["image"].as_str().unwrap().starts_with("<svg"));
        assert!(!item["caption"].as_str().unwrap().is_empty());
    }
    let v = chat(&app, Some(id), "the ninth one").await;
    assert_eq!(v["phase"], "SUGGESTING");
    assert_eq!(v["notice"]["kind"], "index_out_of_range", "{v}");
}

#[tokio::test]
async fn edit_errors_map_to_status_codes() {
    let (app, _) = app();
    let six = json!([0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
    let (status, v) = call(
        &app,
        "POST",
        "/api/design/edit",
        Some(json!({ "session_id": "missing", "attributes": six })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_envelope(&v, "not_found");

    let v = chat(&app, None, "hello").await;
    let id = v["session_id"].as_str().unwrap();
    let (status, v) = call(
        &app,
        "POST",
        "/api/design/edit",
        Some(json!({ "session_id": id, "attributes": six })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_envelope(&v, "conflict");

    let (id, _) = open_editor(&app).await;
    for bad in [
        json!([0.5, 0.5, 0.5, 0.5, 0.5, 1.5]),
        json!([0.5, 0.5]),
        json!({ "sleeve_length": 0.3 }),
        json!("x"),
    ] {
        let (status, v) = call(
            &app,
            "POST",
            "/api/design/edit",
            Some(json!({ "session_id": id, "attributes": bad })),
        )
        .await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}: {v}");
        assert_envelope(&v, "invalid_attributes");
    }
}

#[tokio::test]
async fn identity_edit_returns_the_current_render() {
    let (app, _) = app();
    let (id, opened) = open_editor(&app).await;
    let current = opened["design"]["attributes"].clone();
    let (status, v) = call(
        &app,
        "POST",
        "/api/design/edit",
        Some(json!({ "session_id": id, "attributes": current })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["svg"], opened["design"]["svg"]);
    assert!(v["latency_ms"].as_f64().unwrap() >= 0.0);
}

#[tokio::test]
async fn sleeve_slider_lengthens_the_measured_sleeve() {
    let (app, _) = app();
    let (id, opened) = open_editor(&app).await;
    let mut a: Vec<f64> = opened["design"]["attributes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    a[Attr::SleeveLength.index()] = 0.2;
    let (_, low) = call(
        &app,
        "POST",
        "/api/design/edit",
        Some(json!({ "session_id": id, "attributes": a })),
    )
    .await;
    a[Attr::SleeveLength.index()] = 0.9;
    let names = ServiceConfig::default().attributes;
    let named: serde_json::Map<String, Value> = names
        .iter()
        .cloned()
        .zip(a.iter().map(|x| json!(x)))
        .collect();
    let (status, high) = call(
        &app,
        "POST",
        "/api/design/edit",
        Some(json!({ "session_id": id, "attributes": named })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{high}");
    let before = measure_svg(low["svg"].as_str().unwrap()).unwrap();
    let after = measure_svg(high["svg"].as_str().unwrap()).unwrap();
    assert!(
        after.get(Attr::SleeveLength) > before.get(Attr::SleeveLength),
        "{before:?} -> {after:?}"
    );
}

#[tokio::test]
async fn commit_merges_and_double_commit_conflicts() {
    let (app, state) = app();
    let (id, _) = open_editor(&app).await;
    let (status, v) = call(
        &app,
        "POST",
        "/api/design/commit",
        Some(json!({ "session_id": id })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let item_id = v["item_id"].as_u64().unwrap();
    assert_eq!(item_id, 601);

    let emb = state.embedding(item_id).unwrap();
    let top = state.search_vector(&emb, 1).unwrap()[0];
    assert_eq!(top.id, item_id);
    assert!((top.score - 1.0).abs() < 1e-6);

    let caption = v["caption"].as_str().unwrap();
    let (status, found) = call(
        &app,
        "GET",
        &format!("/api/search?q={}&k=10", caption.replace(' ', "%20")),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<u64> = found["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["id"].as_u64().unwrap())
        .collect();
    assert!(ids.contains(&item_id), "{caption}: {ids:?}");

    let (status, v) = call(
        &app,
        "POST",
        "/api/design/commit",
        Some(json!({ "session_id": id })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_envelope(&v, "conflict");
    let (status, _) = call(
        &app,
        "POST",
        "/api/design/commit",
        Some(json!({ "session_id": "nobody" })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn search_validates_parameters() {
    let (app, _) = app();
    let (status, v) = call(&app, "GET", "/api/search?q=red%20dress&k=3", None).await;
    assert_eq!(status, StatusCode::OK);
    let items = v["items"].as_array().unwrap();
    assert_eq!(items.len(), 3);
    let scores: Vec<f64> = items.iter().map(|i| i["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    for uri in [
        "/api/search?q=red&k=0",
        "/api/search?q=&k=3",
        "/api/search?k=3",
        "/api/search?q=red&k=-1",
        "/api/search?q=red&k=two",
    ] {
        let (status, v) = call(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert_envelope(&v, "bad_request");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_chats_on_one_session_are_serialized() {
    let (app, state) = app();
    let v = chat(&app, None, "hello").await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let mut tasks = Vec::new();
    for text in [
        "I want a dress",
        "red please",
        "hello",
        "long sleeves please",
        "hi there",
        "red please",
    ] {
        let app = app.clone();
        let id = id.clone();
        tasks.push(tokio::spawn(
            async move { chat(&app, Some(&id), text).await },
        ));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let session = state.session(&id).unwrap();
    assert_eq!(session.state.turn, 7, "a turn was lost");
    state.policy().validate(&session.state).unwrap();
}

#[tokio::test]
async fn commits_and_sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::small_config();
    config.data_dir = dir.path().to_path_buf();
    common::small_models().save(&config).unwrap();

    let state = Arc::new(AppState::new(
        Models::load(&config).unwrap(),
        6,
        Some(dir.path().to_path_buf()),
    ));
    let app = router(state.clone(), None);
    let (id, _) = open_editor(&app).await;
    let (_, v) = call(
        &app,
        "POST",
        "/api/design/commit",
        Some(json!({ "session_id": id })),
    )
    .await;
    let item_id = v["item_id"].as_u64().unwrap();
    let emb = state.embedding(item_id).unwrap();
    state.save_snapshot().unwrap();
    drop(app);
    drop(state);

    let reloaded = Models::load(&config).unwrap();
    assert!(reloaded.catalog.iter().any(|c| c.id == item_id));
    let restarted = AppState::new(reloaded, 6, Some(dir.path().to_path_buf()));
    assert_eq!(restarted.search_vector(&emb, 1).unwrap()[0].id, item_id);
    let snapshot = std::fs::read_to_string(dir.path().join("sessions.json")).unwrap();
    assert_eq!(restarted.restore(&snapshot).unwrap(), (1, 0));
    assert_eq!(
        restarted.session(&id).unwrap().state.phase.as_str(),
        "CONFIRMED"
    );
}

#[test]
fn missing_artifacts_are_named_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        ..ServiceConfig::default()
    };
    let err = format!("{:#}", Models::load(&config).unwrap_err());
    assert!(err.contains("intent.nlu"), "{err}");

    common::small_models().save(&config).unwrap();
    std::fs::remove_file(dir.path().join("flow.cnf")).unwrap();
    let err = format!("{:#}", Models::load(&config).unwrap_err());
    assert!(
        err.contains(&dir.path().join("flow.cnf").display().to_string()),
        "{err}"
    );
}
