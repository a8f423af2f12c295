//! In-process HTTP stubs for a completion API and an MT service.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

#[derive(Default)]
pub struct CompletionStub {
    pub calls: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    /// Statuses returned before answering normally.
    pub script: Mutex<VecDeque<u16>>,
    /// Status returned for every call once the script is exhausted; 200 if unset.
    pub steady_status: Mutex<Option<u16>>,
    pub bodies: Mutex<Vec<Value>>,
    pub auth: Mutex<Vec<Option<String>>>,
    /// Fixed answer; otherwise the prompt is echoed back.
    pub answer: Mutex<Option<String>>,
    pub delay_ms: AtomicUsize,
}

async fn complete(State(stub): State<Arc<CompletionStub>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let n = stub.calls.fetch_add(1, Ordering::SeqCst);
    let now = stub.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stub.max_in_flight.fetch_max(now, Ordering::SeqCst);
    stub.auth.lock().unwrap().push(
        headers.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_string),
    );
    let prompt = body["prompt"].as_str().unwrap_or_default().to_string();
    stub.bodies.lock().unwrap().push(body);
    // scramble completion order
    let base = stub.delay_ms.load(Ordering::SeqCst) as u64;
    if base > 0 {
        let jitter = (prompt.len() as u64 * 7 + n as u64 * 13) % (base * 3);
        tokio::time::sleep(Duration::from_millis(base + jitter)).await;
    }
    stub.in_flight.fetch_sub(1, Ordering::SeqCst);
    let scripted = stub.script.lock().unwrap().pop_front();
    let status = scripted.or(*stub.steady_status.lock().unwrap()).unwrap_or(200);
    if status != 200 {
        let mut headers = HeaderMap::new();
        if status == 429 {
            headers.insert("retry-after", "0".parse().unwrap());
        }
        return (StatusCode::from_u16(status).unwrap(), headers, format!("stub status {status}")).into_response();
    }
    let text = stub.answer.lock().unwrap().clone().unwrap_or(prompt);
    Json(json!({"id": format!("stub-{n}"), "choices": [{"text": text, "finish_reason": "stop"}]})).into_response()
}

/// Serves `POST /v1/completions`. Returns the endpoint URL.
pub async fn spawn_completion_stub(stub: Arc<CompletionStub>) -> String {
    let app = Router::new().route("/v1/completions", post(complete)).with_state(stub);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1/completions")
}

#[derive(Default)]
pub struct MtStub {
    pub calls: AtomicUsize,
    /// Non-200 status to fail every request with.
    pub fail_status: Mutex<Option<u16>>,
}

async fn translate(State(stub): State<Arc<MtStub>>, Json(body): Json<Value>) -> Response {
    stub.calls.fetch_add(1, Ordering::SeqCst);
    if let Some(status) = *stub.fail_status.lock().unwrap() {
        return (StatusCode::from_u16(status).unwrap(), "unavailable").into_response();
    }
    let texts: Vec<String> = body["texts"]
        .as_array()
        .map(|a| a.iter().map(|t| format!("MT[{}]", t.as_str().unwrap_or_default())).collect())
        .unwrap_or_default();
    Json(json!({ "translations": texts })).into_response()
}

async fn health(State(stub): State<Arc<MtStub>>) -> StatusCode {
    match *stub.fail_status.lock().unwrap() {
        Some(s) => StatusCode::from_u16(s).unwrap(),
        None => StatusCode::OK,
    }
}

/// Serves `POST /translate` and `GET /health`. Returns the base URL.
pub async fn spawn_mt_stub(stub: Arc<MtStub>) -> String {
    let app = Router::new()
        .route("/translate", post(translate))
        .route("/health", get(health))
        .with_state(stub);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}
