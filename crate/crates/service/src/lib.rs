//! Local HTTP API over a cotscore workspace.
//!
//! Reads go straight to the workspace files. POST requests are applied one
//! at a time, scoring runs are queued to a single background executor, and
//! a POST that carries an `Idempotency-Key` (or `X-Request-Id`) header is
//! answered at most once per key.

mod error;
mod idempotency;
mod jobs;
mod routes;
mod schema;

use std::future::Future;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::Router;
use cotscore_core::workspace::{Workspace, WorkspaceError};
use thiserror::Error;
use tokio::net::TcpListener;

pub use error::{status_for, ApiError};
pub use idempotency::{ALT_REQUEST_ID_HEADER, REPLAYED_HEADER, REQUEST_ID_HEADER};
pub use jobs::{Job, JobStatus};
pub use schema::api_schema;

pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0} is not an initialized data directory; run `cotscore init` first")]
    DataDirMissing(PathBuf),
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error("refusing to bind non-loopback address {0}")]
    NotLoopback(SocketAddr),
    #[error(transparent)]
    Workspace(WorkspaceError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl From<WorkspaceError> for ServiceError {
    fn from(e: WorkspaceError) -> ServiceError {
        match e {
            WorkspaceError::DataDirMissing(p) => ServiceError::DataDirMissing(p),
            other => ServiceError::Workspace(other),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub addr: SocketAddr,
    /// Permits binding a non-loopback address.
    pub allow_remote: bool,
}

impl ServiceConfig {
    pub fn local(data_dir: &Path, port: u16) -> ServiceConfig {
        ServiceConfig {
            data_dir: data_dir.to_path_buf(),
            addr: SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), port),
            allow_remote: false,
        }
    }
}

#[derive(Clone)]
pub(crate) struct AppState {
    pub ws: Arc<Workspace>,
    pub jobs: jobs::JobQueue,
    pub replays: Arc<idempotency::ReplayCache>,
    pub writes: Arc<tokio::sync::Mutex<()>>,
}

/// The API router over `ws`. Must be called inside a tokio runtime, since it
/// starts the run executor.
pub fn app(ws: Workspace) -> Router {
    let ws = Arc::new(ws);
    routes::router(AppState {
        jobs: jobs::JobQueue::start(ws.clone()),
        ws,
        replays: Arc::default(),
        writes: Arc::default(),
    })
}

pub struct Server {
    listener: TcpListener,
    app: Router,
}

impl Server {
    pub async fn bind(config: &ServiceConfig) -> Result<Server, ServiceError> {
        if !config.allow_remote && !config.addr.ip().is_loopback() {
            return Err(ServiceError::NotLoopback(config.addr));
        }
        let ws = Workspace::open(&config.data_dir)?;
        let listener = TcpListener::bind(config.addr).await.map_err(|e| {
            if e.kind() == std::io::ErrorKind::AddrInUse {
                ServiceError::PortInUse(config.addr)
            } else {
                ServiceError::Io(e)
            }
        })?;
        Ok(Server {
            listener,
            app: app(ws),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener
            .local_addr()
            .expect("a bound listener has an address")
    }

    pub async fn run(self) -> Result<(), ServiceError> {
        axum::serve(self.listener, self.app).await?;
        Ok(())
    }

    pub async fn run_until<F>(self, shutdown: F) -> Result<(), ServiceError>
    where
        F: Future<Output = ()> + Send + 'static,
    {
        axum::serve(self.listener, self.app)
            .with_graceful_shutdown(shutdown)
            .await?;
        Ok(())
    }
}
