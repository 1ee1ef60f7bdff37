//! Binding and serving: the bus listener, the HTTP API and, on a wall
//! clock, the ticker that fires timers and retries.

use std::net::SocketAddr;
use std::time::Duration;

use subjektiv_core::clock::ClockMode;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tracing::{info, warn};

use crate::config::NodeConfig;
use crate::node::{serve_bus, Node};
use crate::store::Store;

const TICK: Duration = Duration::from_millis(20);

pub struct Listeners {
    bus: TcpListener,
    http: TcpListener,
}

impl Listeners {
    pub async fn bind(cfg: &NodeConfig) -> std::io::Result<Self> {
        let bus = TcpListener::bind((cfg.listen.host.as_str(), cfg.listen.port)).await?;
        let http = TcpListener::bind((cfg.http.host.as_str(), cfg.http.port)).await?;
        Ok(Self { bus, http })
    }

    pub fn bus_addr(&self) -> SocketAddr {
        self.bus.local_addr().expect("bound")
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http.local_addr().expect("bound")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("cannot open store {path}: {message}")]
    Store { path: String, message: String },
    #[error("cannot bind: {0}")]
    Bind(std::io::Error),
}

/// A node serving on its listeners. Dropping it stops the HTTP server.
pub struct Running {
    pub node: Node,
    pub bus_addr: SocketAddr,
    pub http_addr: SocketAddr,
    /// Store files skipped at startup.
    pub skipped: Vec<String>,
    shutdown: Option<oneshot::Sender<()>>,
    tasks: Vec<JoinHandle<()>>,
}

impl Running {
    pub fn url(&self) -> String {
        format!("http://{}", self.http_addr)
    }

    /// Serves until the HTTP server stops.
    pub async fn wait(mut self) {
        if let Some(http) = self.tasks.pop() {
            let _ = http.await;
        }
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        for t in &self.tasks {
            t.abort();
        }
    }
}

/// Opens the store, registers its definitions and starts serving. Must be
/// called inside a tokio runtime.
pub async fn start(cfg: &NodeConfig, listeners: Listeners) -> Result<Running, StartError> {
    let store = Store::open(&cfg.store_dir).map_err(|e| StartError::Store {
        path: cfg.store_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let (node, skipped) =
        Node::with_store(cfg.host_config(), store).map_err(|e| StartError::Store {
            path: cfg.store_dir.display().to_string(),
            message: e.to_string(),
        })?;
    for s in &skipped {
        warn!("skipped stored definition: {s}");
    }
    let bus_addr = listeners.bus_addr();
    let http_addr = listeners.http_addr();
    let mut tasks = vec![tokio::spawn(serve_bus(node.clone(), listeners.bus))];
    if cfg.clock == ClockMode::Wall {
        let n = node.clone();
        tasks.push(tokio::spawn(async move {
            let mut every = tokio::time::interval(TICK);
            loop {
                every.tick().await;
                n.tick().await;
            }
        }));
    }
    let (tx, rx) = oneshot::channel::<()>();
    let app = crate::api::router(node.clone());
    tasks.push(tokio::spawn(async move {
        let served = axum::serve(listeners.http, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = served {
            warn!("http server stopped: {e}");
        }
    }));
    info!(company = %cfg.company, bus = %bus_addr, http = %http_addr, "node up");
    Ok(Running {
        node,
        bus_addr,
        http_addr,
        skipped,
        shutdown: Some(tx),
        tasks,
    })
}

/// Binds and starts in one step.
pub async fn serve(cfg: &NodeConfig) -> Result<Running, StartError> {
    let listeners = Listeners::bind(cfg).await.map_err(StartError::Bind)?;
    start(cfg, listeners).await
}
