//! HTTP API over the stereoscope engine.
//!
//! Every project lives in memory behind a snapshot pointer. Reads clone the
//! pointer; writes are serialized per project and publish a new snapshot, so a
//! reader never observes a half-applied change. Scoring runs as background
//! jobs on a bounded worker pool.

mod config;
mod error;
mod extract;
mod projects;
mod state;
mod views;

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::http::{HeaderValue, Method};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use config::{ServiceConfig, DEFAULT_PORT};
pub use error::{ApiError, ApiResult};
pub use state::{AppState, JobState, JobStatus, ProjectSlot, SentenceFailure};

const BODY_LIMIT: usize = 256 * 1024 * 1024;

pub fn router(state: Arc<AppState>) -> Router {
    let cors = cors_layer(&state.config.cors_origins);
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/projects", post(projects::create).get(projects::list))
        .route("/api/projects/import", post(projects::import))
        .route("/api/projects/{id}", get(projects::show))
        .route("/api/projects/{id}/export", get(projects::export))
        .route("/api/projects/{id}/models", post(projects::add_model).get(projects::list_models))
        .route("/api/projects/{id}/models/{model_id}", get(projects::model_status))
        .route("/api/projects/{id}/distributions", get(views::distributions))
        .route("/api/projects/{id}/filters", post(views::set_filters).get(views::get_filters))
        .route("/api/projects/{id}/sentences", get(views::sentences))
        .route("/api/projects/{id}/embedding", post(views::set_embedding).get(views::get_embedding))
        .route("/api/projects/{id}/probes", post(views::add_probe).get(views::list_probes))
        .route("/api/projects/{id}/probes/{probe_id}", delete(views::remove_probe))
        .route("/api/projects/{id}/view", get(views::get_view).put(views::set_view))
        .route("/api/projects/{id}/bias", get(views::bias))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state);
    match cors {
        Some(layer) => api.layer(layer),
        None => api,
    }
}

fn cors_layer(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    Some(
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(list))
            .allow_methods([Method::GET, Method::POST, Method::PUT, Method::DELETE])
            .allow_headers([axum::http::header::CONTENT_TYPE]),
    )
}

async fn health(axum::extract::State(state): axum::extract::State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "projects": state.slots().len()}))
}

/// A bound listener plus the application it will serve.
pub struct Server {
    listener: TcpListener,
    app: Router,
}

impl Server {
    pub async fn bind(state: Arc<AppState>, addr: SocketAddr) -> io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        Ok(Server { listener, app: router(state) })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub async fn run(self) -> io::Result<()> {
        axum::serve(self.listener, self.app).await
    }

    pub async fn run_until(self, shutdown: impl Future<Output = ()> + Send + 'static) -> io::Result<()> {
        axum::serve(self.listener, self.app).with_graceful_shutdown(shutdown).await
    }
}
