use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use trainfractal_core::formats::{decode_field, decode_png, parse_boxcount_csv};
use trainfractal_core::ConditionId;
use trainfractal_service::{router, AppState, ServiceConfig, QUEUE_LIMIT};

fn app() -> (AppState, Router) {
    let state = AppState::new(ServiceConfig { workers: Some(1), ..Default::default() });
    (state.clone(), router(state))
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, body: &str) -> (StatusCode, Value) {
    let (code, bytes) = send(app, Request::post("/api/render").body(Body::from(body.to_string())).unwrap()).await;
    (code, serde_json::from_slice(&bytes).unwrap())
}

fn small_baseline(steps: u32) -> String {
    json!({"condition": "tanh-fullbatch", "width": 64, "height": 64, "steps": steps}).to_string()
}

#[tokio::test]
async fn conditions_lists_six_presets_in_stable_order() {
    let (_, app) = app();
    let (code, first) = get(&app, "/api/conditions").await;
    assert_eq!(code, StatusCode::OK);
    let (_, second) = get(&app, "/api/conditions").await;
    assert_eq!(first, second);
    let list: Vec<Value> = serde_json::from_slice(&first).unwrap();
    assert_eq!(list.len(), 6);
    let ids: Vec<&str> = list.iter().map(|c| c["id"].as_str().unwrap()).collect();
    let expected: Vec<&str> = ConditionId::ALL.iter().map(|c| c.slug()).collect();
    assert_eq!(ids, expected);
    assert!(ids.contains(&"deep-linear"));
    assert_eq!(list[3]["batch_size"], 16);
    assert!(list[0]["x_axis"]["lo"].is_number() && list[0]["steps"] == 500);
}

#[tokio::test]
async fn small_request_renders_inline_and_artifacts_are_stable() {
    let (_, app) = app();
    let (code, body) = post(&app, &small_baseline(20)).await;
    assert_eq!(code, StatusCode::OK, "{body}");
    assert!(body.get("dimension").is_some());
    let id = body["job_id"].as_str().unwrap();

    let (code, status) = get(&app, &format!("/api/render/{id}/status")).await;
    assert_eq!(code, StatusCode::OK);
    let status: Value = serde_json::from_slice(&status).unwrap();
    assert_eq!(status["state"], "done");
    assert_eq!(status["progress"], 1.0);

    let image_url = body["image_url"].as_str().unwrap();
    let (code, png) = get(&app, image_url).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(get(&app, image_url).await.1, png);
    let image = decode_png(&png).unwrap();
    assert_eq!((image.width, image.height), (64, 64));

    let (_, field) = get(&app, body["field_url"].as_str().unwrap()).await;
    let field = decode_field(&field).unwrap();
    assert_eq!((field.width, field.height, field.steps), (64, 64, 20));

    let (_, csv) = get(&app, body["fracdim_url"].as_str().unwrap()).await;
    let (entries, dimension, _) = parse_boxcount_csv(std::str::from_utf8(&csv).unwrap()).unwrap();
    assert!(!entries.is_empty());
    match body["dimension"].as_f64() {
        Some(d) => assert_eq!(d.to_bits(), dimension.to_bits()),
        None => assert!(dimension.is_nan()),
    }

    // Same body, new job, identical bytes.
    let (_, again) = post(&app, &small_baseline(20)).await;
    assert_ne!(again["job_id"], body["job_id"]);
    assert_eq!(get(&app, again["image_url"].as_str().unwrap()).await.1, png);
}

#[tokio::test]
async fn request_errors_map_to_status_codes() {
    let (_, app) = app();
    for bad in ["not json", r#"{"condition":"tanh-fullbatch","colour":1}"#, r#"{"condition":"sigmoid"}"#, r#"{"seed":1}"#] {
        assert_eq!(post(&app, bad).await.0, StatusCode::BAD_REQUEST, "{bad}");
    }
    let inverted = json!({"condition": "tanh-fullbatch", "viewport": {"x": {"lo": 2.0, "hi": 1.0}, "y": {"lo": 0.0, "hi": 1.0}}});
    assert_eq!(post(&app, &inverted.to_string()).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let empty = json!({"condition": "tanh-fullbatch", "width": 0});
    assert_eq!(post(&app, &empty.to_string()).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    assert_eq!(get(&app, "/api/render/nope/status").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/api/render/nope/image.png").await.0, StatusCode::NOT_FOUND);
    let (_, body) = post(&app, &small_baseline(1)).await;
    let id = body["job_id"].as_str().unwrap();
    assert_eq!(get(&app, &format!("/api/render/{id}/other.bin")).await.0, StatusCode::NOT_FOUND);
}

// The pause guard only blocks the render worker thread; no handler awaited here takes it.
#[allow(clippy::await_holding_lock)]
#[tokio::test]
async fn large_requests_queue_with_a_bound() {
    let (state, app) = app();
    let cancel_on_exit = CancelOnDrop(state.clone());
    let paused = state.pause();

    let big = json!({"condition": "deep-linear", "width": 2048, "height": 2048, "steps": 1}).to_string();
    let (code, body) = post(&app, &big).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let id = body["job_id"].as_str().unwrap().to_string();
    assert!(body.get("dimension").is_none());

    let (_, status) = get(&app, &format!("/api/render/{id}/status")).await;
    let status: Value = serde_json::from_slice(&status).unwrap();
    assert_eq!(status["state"], "queued");
    assert_eq!(status["progress"], 0.0);
    for artifact in ["image.png", "field.nnfr", "fracdim.csv"] {
        assert_eq!(get(&app, &format!("/api/render/{id}/{artifact}")).await.0, StatusCode::CONFLICT);
    }

    for _ in 1..QUEUE_LIMIT {
        assert_eq!(post(&app, &big).await.0, StatusCode::ACCEPTED);
    }
    assert_eq!(post(&app, &big).await.0, StatusCode::TOO_MANY_REQUESTS);
    drop(paused);
    drop(cancel_on_exit);
}

struct CancelOnDrop(AppState);

impl Drop for CancelOnDrop {
    fn drop(&mut self) {
        self.0.cancel_all();
    }
}

#[tokio::test]
async fn queued_job_runs_to_completion_with_monotone_progress() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(ServiceConfig { workers: Some(1), out_dir: Some(dir.path().into()), ..Default::default() });
    let app = router(state);
    let req = json!({"condition": "deep-linear", "width": 300, "height": 300, "steps": 2}).to_string();
    let (code, body) = post(&app, &req).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let id = body["job_id"].as_str().unwrap().to_string();

    let deadline = Instant::now() + Duration::from_secs(300);
    let mut last = 0.0;
    loop {
        let (_, s) = get(&app, &format!("/api/render/{id}/status")).await;
        let s: Value = serde_json::from_slice(&s).unwrap();
        let progress = s["progress"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&progress) && progress >= last);
        last = progress;
        if s["state"] == "done" {
            break;
        }
        assert_ne!(s["state"], "failed", "{s}");
        assert!(Instant::now() < deadline, "job did not finish");
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert_eq!(last, 1.0);
    let (_, png) = get(&app, &format!("/api/render/{id}/image.png")).await;
    assert_eq!(std::fs::read(dir.path().join(&id).join("image.png")).unwrap(), png);
    let sidecar = std::fs::read_to_string(dir.path().join(&id).join("request.json")).unwrap();
    assert!(sidecar.contains("\"deep-linear\""));
}

#[tokio::test]
async fn cross_origin_requests_are_allowed() {
    let (_, app) = app();
    let req = Request::get("/api/conditions").header("origin", "http://localhost:5173").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");

    let state = AppState::new(ServiceConfig { allowed_origins: vec!["http://a.test".into()], ..Default::default() });
    let app = router(state);
    let req = Request::get("/api/conditions").header("origin", "http://a.test").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://a.test");
    let req = Request::get("/api/conditions").header("origin", "http://b.test").body(Body::empty()).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.headers().get("access-control-allow-origin").is_none());
}
