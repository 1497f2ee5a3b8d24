//! HTTP facade over versioned map snapshots: viewport queries, per-field
//! search, point details, density tiles, labels, image generation and
//! per-session history.

mod api;
mod config;
mod error;
mod history;
mod snapshot;

pub use api::{router, AppState, SharedState, DEFAULT_SEARCH_K, MAX_SEARCH_K, SESSION_HEADER};
pub use config::{ImageBackendKind, ServiceConfig};
pub use error::{ApiError, VERSION_HEADER};
pub use history::{History, HistoryEntry};
pub use snapshot::{FieldSearch, MapView, Snapshot, SnapshotData, SnapshotStore};

use std::sync::Arc;

/// Binds `config.bind` and serves until Ctrl-C.
pub async fn serve(state: AppState) -> std::io::Result<()> {
    let addr = state.config.bind.clone();
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
