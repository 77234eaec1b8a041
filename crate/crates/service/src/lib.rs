//! HTTP service exposing datasets and progressive sampling sessions.
//!
//! Every route lives under `/v1`. Errors are JSON `{code, message}` bodies.
//! Inserts into a dataset with open sessions are queued and applied once the
//! last of those sessions is exhausted, deleted or reclaimed.

pub mod error;
pub mod model;
pub mod routes;
pub mod state;

use std::net::SocketAddr;

pub use error::ApiError;
pub use routes::router;
pub use state::{AppState, ServiceConfig};

/// Binds `addr` and serves until the process is stopped. The idle-session
/// reaper runs alongside.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config);
    let reaper = state.spawn_reaper();
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let result = axum::serve(listener, router(state)).await;
    reaper.abort();
    result
}
