#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use stereoscope_core::scoring::{ScoreRequest, ScoreResponse, ScoreResult, TOKEN_LOGPROBS_PATH};

/// How the mock server misbehaves.
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Good,
    /// Drops one log-prob for sentences containing the marker.
    LengthMismatch(String),
    /// Returns a positive log-prob for sentences containing the marker.
    Positive(String),
    /// Answers one result fewer than requested.
    MissingResult,
    /// Answers with a body that is not JSON.
    Garbage,
    /// Fails the first `n` requests with 503, then behaves.
    FailFirst(usize),
    /// Always 500.
    Down,
}

/// Deterministic token scores for the mock: whitespace tokens, log-prob a
/// function of token length and position.
pub fn mock_log_probs(sentence: &str) -> (Vec<String>, Vec<f64>) {
    let tokens: Vec<String> = sentence.split_whitespace().map(str::to_string).collect();
    let log_probs = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| -((t.chars().count() % 7) as f64 + 1.0) / (i as f64 + 2.0))
        .collect();
    (tokens, log_probs)
}

struct Shared {
    mode: Mode,
    hits: AtomicUsize,
    requests: Mutex<Vec<ScoreRequest>>,
}

pub struct MockServer {
    pub url: String,
    shared: Arc<Shared>,
    _runtime: tokio::runtime::Runtime,
}

impl MockServer {
    pub fn start(mode: Mode) -> Self {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let shared = Arc::new(Shared { mode, hits: AtomicUsize::new(0), requests: Mutex::new(Vec::new()) });
        let app = Router::new().route(TOKEN_LOGPROBS_PATH, post(handle)).with_state(shared.clone());
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        runtime.spawn(async move { axum::serve(listener, app).await.unwrap() });
        MockServer { url, shared, _runtime: runtime }
    }

    pub fn hits(&self) -> usize {
        self.shared.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ScoreRequest> {
        self.shared.requests.lock().unwrap().clone()
    }
}

async fn handle(State(shared): State<Arc<Shared>>, Json(request): Json<ScoreRequest>) -> Response {
    let hit = shared.hits.fetch_add(1, Ordering::SeqCst);
    shared.requests.lock().unwrap().push(request.clone());
    match &shared.mode {
        Mode::Down => return (StatusCode::INTERNAL_SERVER_ERROR, "down").into_response(),
        Mode::FailFirst(n) if hit < *n => return (StatusCode::SERVICE_UNAVAILABLE, "busy").into_response(),
        Mode::Garbage => return (StatusCode::OK, "not json").into_response(),
        _ => {}
    }
    let mut results: Vec<ScoreResult> = request
        .sentences
        .iter()
        .map(|s| {
            let (tokens, mut log_probs) = mock_log_probs(s);
            match &shared.mode {
                Mode::LengthMismatch(marker) if s.contains(marker.as_str()) => {
                    log_probs.pop();
                }
                Mode::Positive(marker) if s.contains(marker.as_str()) => log_probs[0] = 0.5,
                _ => {}
            }
            ScoreResult { tokens, log_probs }
        })
        .collect();
    if shared.mode == Mode::MissingResult {
        results.pop();
    }
    Json(ScoreResponse { results }).into_response()
}
