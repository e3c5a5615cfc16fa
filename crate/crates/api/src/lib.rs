//! HTTP service over the view engine and the operator desk.

pub mod auth;
pub mod error;
pub mod render;
pub mod routes;
pub mod service;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

pub use auth::{Identities, OperatorIdentity, Role};
pub use error::{status_for, ApiError, STATUS_BY_CODE};
pub use routes::{required_role, router, ROUTES};
pub use service::{Service, ServiceError, ServiceSettings, ALARM_FEED_PROVIDER};

/// How often the scheduler ticks and the desk runs its housekeeping.
pub const SCHEDULER_INTERVAL: Duration = Duration::from_secs(1);
pub const HOUSEKEEPING_INTERVAL: Duration = Duration::from_secs(60);

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("BIND_FAILURE: {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server stopped: {0}")]
    Io(#[from] std::io::Error),
}

/// Serves until ctrl-c. Periodic refreshes, ticket synchronization and alarm
/// auto-close run in the background.
pub async fn serve(service: Arc<Service>, addr: SocketAddr) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    tracing::info!(%addr, views = service.engine.view_names().len(), "listening");
    let _scheduler = service.engine.spawn_scheduler(SCHEDULER_INTERVAL);
    let housekeeping = {
        let svc = service.clone();
        tokio::spawn(async move {
            let mut every = tokio::time::interval(HOUSEKEEPING_INTERVAL);
            loop {
                every.tick().await;
                let svc = svc.clone();
                let _ = tokio::task::spawn_blocking(move || {
                    let report = svc.desk.synchronize();
                    if report.applied > 0 {
                        svc.written("tickets");
                    }
                    if !svc.desk.auto_close().is_empty() {
                        svc.written("alarms");
                    }
                })
                .await;
            }
        })
    };
    let result = axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await;
    housekeeping.abort();
    Ok(result?)
}
