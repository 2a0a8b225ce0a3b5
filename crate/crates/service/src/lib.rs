//! Case-oriented HTTP service: cases, image submission, review overrides,
//! candidate ranking and report export, persisted in an append-only journal.

mod api;
mod app;
mod config;
mod error;
mod model;
mod store;

use std::sync::Arc;

pub use api::router;
pub use app::{image_id_from_filename, AppState, CreateCase, OverrideRequest, StateOptions, Upload, DEFAULT_PAGE_SIZE, MAX_PAGE_SIZE};
pub use config::ServiceConfig;
pub use error::ApiError;
pub use model::*;
pub use store::{sha256_hex, BlobStore, Store, StoreError, JOURNAL_NAME};

/// Binds, resumes unfinished jobs and serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), String> {
    let state = AppState::from_config(&cfg)?;
    run(state, cfg.bind).await
}

pub async fn run(state: Arc<AppState>, bind: std::net::SocketAddr) -> Result<(), String> {
    let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| format!("bind {bind}: {e}"))?;
    let resumed = state.resume();
    if resumed > 0 {
        log::info!("requeued {resumed} unprocessed image(s)");
    }
    log::info!("listening on {}", listener.local_addr().map_err(|e| e.to_string())?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}
