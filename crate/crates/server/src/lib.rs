//! HTTP service over the snapshot store and the analysis job queue.
//!
//! Everything lives under `/api/v1`. Per-snapshot reads answer with
//! `{"snapshot_id": …, "data": …}` and an `X-Snapshot-Id` header.

mod api;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::Router;
use multidimer_core::jobs::JobManager;
use multidimer_core::SnapshotStore;
use tower_http::services::ServeDir;

pub use api::{BugSummary, DrillDown, JobRequest};
pub use error::ApiError;

pub const SNAPSHOT_HEADER: &str = "x-snapshot-id";

#[derive(Clone)]
pub struct AppState {
    pub store: SnapshotStore,
    pub jobs: Arc<JobManager>,
    /// Directory holding `component-map.json`; target of config updates.
    pub config_dir: PathBuf,
}

/// API routes, plus static files under `/ui/` when `ui_dir` is given.
pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .nest("/api/v1", api::routes())
        .with_state(state);
    match ui_dir {
        Some(dir) => app.nest_service(
            "/ui",
            ServeDir::new(dir).append_index_html_on_directories(true),
        ),
        None => app,
    }
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
