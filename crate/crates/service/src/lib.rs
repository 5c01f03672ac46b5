//! HTTP job service for interactive labeling.
//!
//! A session owns one uploaded video, its annotation set, and the tracks
//! produced by track and optimize jobs. Sessions and jobs live on disk under
//! the data directory and survive restarts. See `README.md` in this crate
//! for the endpoint reference.

mod api;
pub mod error;
mod jobs;
pub mod state;

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use axum::extract::DefaultBodyLimit;
use axum::http::HeaderValue;
use axum::routing::get;
use axum::Router;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

pub use api::resolve_config;
pub use state::{AppState, Job, JobKind, JobStatus, TrackMethod};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Jobs allowed to run at once across all sessions.
    pub workers: usize,
    pub max_upload_bytes: usize,
    /// Exact origin allowed by CORS; any origin when `None`.
    pub cors_origin: Option<String>,
    /// Directory served for paths no route claims.
    pub static_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            workers: 2,
            max_upload_bytes: 256 * 1024 * 1024,
            cors_origin: None,
            static_dir: None,
        }
    }
}

/// Loads persisted sessions, restarts queued jobs, and returns the router.
/// Must be called inside a tokio runtime.
pub fn app(config: ServiceConfig) -> anyhow::Result<Router> {
    let (state, pending) = AppState::open(config)?;
    jobs::resume(&state, pending);
    router(state)
}

pub fn router(state: AppState) -> anyhow::Result<Router> {
    let cfg = &state.0.config;
    let origin = match &cfg.cors_origin {
        None => AllowOrigin::from(Any),
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).with_context(|| format!("bad CORS origin {o:?}"))?),
    };
    let cors = CorsLayer::new().allow_origin(origin).allow_methods(Any).allow_headers(Any);
    let mut router = Router::new()
        .route("/health", get(api::health))
        .route("/sessions", get(api::list_sessions).post(api::create_session))
        .route("/sessions/{id}", get(api::get_session).delete(api::delete_session))
        .route("/sessions/{id}/frames/{index}", get(api::get_frame))
        .route(
            "/sessions/{id}/annotations",
            get(api::get_annotations).put(api::put_annotations),
        )
        .route("/sessions/{id}/jobs", get(api::list_jobs).post(api::create_job))
        .route("/sessions/{id}/tracks", get(api::get_tracks))
        .route("/sessions/{id}/export", get(api::export))
        .route("/jobs/{job_id}", get(api::get_job))
        .route("/jobs/{job_id}/trace", get(api::get_trace))
        .layer(DefaultBodyLimit::max(cfg.max_upload_bytes));
    if let Some(dir) = &cfg.static_dir {
        router = router.fallback_service(ServeDir::new(dir));
    }
    Ok(router.layer(cors).with_state(state))
}

/// Serves until ctrl-c.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> anyhow::Result<()> {
    let data_dir = config.data_dir.clone();
    let app = app(config)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!("listening on http://{addr}, data in {}", data_dir.display());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
        .context("server error")
}
