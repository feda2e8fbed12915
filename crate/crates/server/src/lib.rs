//! HTTP/JSON service over the adventure engine, with server-sent event
//! streams for live gate, score and leaderboard updates.
//!
//! State lives in a [`DocumentStore`]; restarting against the same data
//! directory restores users, sessions, beacon regions, feedback and tokens.

pub mod auth;
pub mod error;
pub mod routes;
pub mod state;

use std::future::Future;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use marge_core::adventure::{seed_catalog, Catalog, GameError};
use marge_core::store::{DocumentStore, StoreError, DATA_DIR_ENV};
use thiserror::Error;
use tokio::net::TcpListener;

pub use error::ApiError;
pub use routes::router;
pub use state::{AppState, StreamMessage};

pub const DEFAULT_PORT: u16 = 8080;
pub const PORT_ENV: &str = "MARGE_PORT";

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("cannot read catalog {path}: {source}")]
    CatalogIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("catalog {path} is invalid: {source}")]
    Catalog { path: PathBuf, source: GameError },
    #[error("data directory: {0}")]
    Store(#[from] StoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub host: IpAddr,
    pub port: u16,
    /// Seeded catalog when absent.
    pub catalog: Option<PathBuf>,
    /// In-memory store when absent.
    pub data_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            catalog: None,
            data_dir: None,
        }
    }
}

impl ServerConfig {
    /// Applies `MARGE_PORT` and `MARGE_DATA_DIR`, which win over flags.
    pub fn with_env_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, StartupError> {
        if let Some(p) = lookup(PORT_ENV) {
            self.port = p
                .trim()
                .parse()
                .map_err(|_| StartupError::Config(format!("{PORT_ENV}={p:?} is not a port number")))?;
        }
        if let Some(d) = lookup(DATA_DIR_ENV) {
            self.data_dir = Some(PathBuf::from(d));
        }
        Ok(self)
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.port)
    }
}

pub fn load_catalog(path: Option<&Path>) -> Result<Catalog, StartupError> {
    let Some(path) = path else {
        return Ok(seed_catalog());
    };
    let text = std::fs::read_to_string(path).map_err(|source| StartupError::CatalogIo {
        path: path.to_path_buf(),
        source,
    })?;
    Catalog::from_json_str(&text).map_err(|source| StartupError::Catalog {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the catalog and opens the store named by `config`.
pub fn build_state(config: &ServerConfig) -> Result<Arc<AppState>, StartupError> {
    let catalog = Arc::new(load_catalog(config.catalog.as_deref())?);
    let store = match &config.data_dir {
        Some(d) => DocumentStore::open(d)?,
        None => DocumentStore::in_memory(),
    };
    Ok(Arc::new(AppState::new(catalog, store)?))
}

/// Serves on an already bound listener until `shutdown` resolves, then
/// ends event streams, lets in-flight requests finish and flushes the store.
pub async fn serve_on(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), StartupError> {
    let st = Arc::clone(&state);
    axum::serve(listener, router(Arc::clone(&state)))
        .with_graceful_shutdown(async move {
            shutdown.await;
            st.begin_shutdown();
        })
        .await
        .map_err(StartupError::Serve)?;
    state.store().sync()?;
    Ok(())
}

pub async fn serve(config: ServerConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), StartupError> {
    let state = build_state(&config)?;
    let addr = config.addr();
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| StartupError::Bind { addr, source })?;
    tracing::info!(%addr, "listening");
    serve_on(listener, state, shutdown).await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}
