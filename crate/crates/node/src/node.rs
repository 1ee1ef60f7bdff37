//! A running node: one actor thread owns the [`Host`]; HTTP handlers and
//! bus connections send it closures. Envelopes for other companies go out
//! through one ordered sender task per peer.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc as std_mpsc, Arc, Mutex};
use std::thread;
use std::time::Duration;

use subjektiv_core::bus::{FrameKind, NackReason, Peer, WireFrame};
use subjektiv_core::host::{Host, HostConfig, Outbound};
use subjektiv_core::model::ValidModel;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tracing::{debug, warn};
use uuid::Uuid;

use crate::store::Store;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);
const REPLY_TIMEOUT: Duration = Duration::from_secs(5);

type Job = Box<dyn FnOnce(&mut Actor) + Send>;

struct Actor {
    host: Host,
    store: Option<Store>,
    written: HashMap<Uuid, usize>,
}

impl Actor {
    /// Appends trace records produced since the last job to the run logs.
    fn persist(&mut self) {
        let Some(store) = &self.store else { return };
        for engine in self.host.instances() {
            let done = self.written.entry(engine.instance()).or_default();
            let trace = engine.trace();
            if trace.len() > *done {
                if let Err(e) = store.append_trace(engine.instance(), &trace[*done..]) {
                    warn!(instance = %engine.instance(), "cannot write trace: {e}");
                    continue;
                }
                *done = trace.len();
            }
        }
    }
}

type PeerQueue = mpsc::UnboundedSender<(Outbound, oneshot::Sender<()>)>;

struct Inner {
    jobs: std_mpsc::Sender<Job>,
    company: Option<String>,
    in_flight: AtomicUsize,
    peers: Mutex<HashMap<Peer, PeerQueue>>,
}

#[derive(Debug, thiserror::Error)]
pub enum RegisterError {
    #[error("{0}")]
    Parse(String),
    #[error("model does not validate")]
    Invalid(subjektiv_core::model::ValidationReport),
    #[error("cannot store definition: {0}")]
    Io(String),
}

/// Cheap to clone; every clone talks to the same actor.
#[derive(Clone)]
pub struct Node {
    inner: Arc<Inner>,
}

impl Node {
    pub fn new(config: HostConfig, store: Option<Store>) -> Self {
        let company = config.company.clone();
        let (tx, rx) = std_mpsc::channel::<Job>();
        let mut actor = Actor {
            host: Host::new(config),
            store,
            written: HashMap::new(),
        };
        thread::Builder::new()
            .name("subjektiv-host".into())
            .spawn(move || {
                while let Ok(job) = rx.recv() {
                    job(&mut actor);
                    actor.persist();
                }
            })
            .expect("spawn host thread");
        Self {
            inner: Arc::new(Inner {
                jobs: tx,
                company,
                in_flight: AtomicUsize::new(0),
                peers: Mutex::new(HashMap::new()),
            }),
        }
    }

    /// A node with the definitions found in `store` already registered.
    /// Returns the problems with skipped files alongside.
    pub fn with_store(config: HostConfig, store: Store) -> std::io::Result<(Self, Vec<String>)> {
        let (models, skipped) = store.load_processes()?;
        let node = Self::new(config, Some(store));
        for m in models {
            node.call_blocking(move |h| h.register(m));
        }
        Ok((node, skipped))
    }

    pub fn company(&self) -> Option<&str> {
        self.inner.company.as_deref()
    }

    /// Runs `f` on the actor thread.
    pub async fn call<R, F>(&self, f: F) -> R
    where
        R: Send + 'static,
        F: FnOnce(&mut Host) -> R + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        self.submit(move |a| {
            let _ = tx.send(f(&mut a.host));
        });
        rx.await.expect("host thread alive")
    }

    /// Like [`Node::call`], for callers outside an async runtime.
    pub fn call_blocking<R, F>(&self, f: F) -> R
    where
        R: Send + 'static,
        F: FnOnce(&mut Host) -> R + Send + 'static,
    {
        let (tx, rx) = std_mpsc::channel();
        self.submit(move |a| {
            let _ = tx.send(f(&mut a.host));
        });
        rx.recv().expect("host thread alive")
    }

    fn submit(&self, job: impl FnOnce(&mut Actor) + Send + 'static) {
        self.inner
            .jobs
            .send(Box::new(job))
            .expect("host thread alive");
    }

    /// Parses, validates, registers and stores a definition.
    pub async fn register_source(&self, source: &str) -> Result<ValidModel, RegisterError> {
        let model = subjektiv_core::pdl::parse(source)
            .map_err(|e| RegisterError::Parse(e.to_string()))?
            .into_valid()
            .map_err(RegisterError::Invalid)?;
        let m = model.clone();
        let (tx, rx) = oneshot::channel();
        self.submit(move |a| {
            let saved = match &a.store {
                Some(store) => store.save_process(&m).map_err(|e| e.to_string()),
                None => Ok(()),
            };
            if saved.is_ok() {
                a.host.register(m);
            }
            let _ = tx.send(saved);
        });
        rx.await
            .expect("host thread alive")
            .map_err(RegisterError::Io)?;
        Ok(model)
    }

    /// Envelopes sent to peers whose outcome is not yet known.
    pub fn in_flight(&self) -> usize {
        self.inner.in_flight.load(Ordering::SeqCst)
    }

    /// Sends each envelope once and returns when every outcome has been
    /// reported to the host. Failures become retries or dead letters there.
    pub async fn dispatch(&self, out: Vec<Outbound>) {
        let mut waits = Vec::with_capacity(out.len());
        for o in out {
            let (tx, rx) = oneshot::channel();
            self.inner.in_flight.fetch_add(1, Ordering::SeqCst);
            self.queue(&o.peer).send((o, tx)).expect("peer task alive");
            waits.push(rx);
        }
        for w in waits {
            let _ = w.await;
        }
    }

    fn queue(&self, peer: &Peer) -> PeerQueue {
        let mut peers = self.inner.peers.lock().expect("peer map");
        peers
            .entry(peer.clone())
            .or_insert_with(|| {
                let (tx, rx) = mpsc::unbounded_channel();
                tokio::spawn(peer_loop(self.clone(), peer.clone(), rx));
                tx
            })
            .clone()
    }

    /// Fires due timers and performs due retries, shipping what they emit.
    pub async fn tick(&self) -> (usize, usize) {
        let (fired, (flushed, out)) = self
            .call(|h| (h.fire_due_timers(), h.flush_retries()))
            .await;
        self.dispatch(out).await;
        (fired, flushed)
    }
}

enum Reply {
    Ack,
    Nack(NackReason),
}

struct Conn {
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
}

async fn peer_loop(
    node: Node,
    peer: Peer,
    mut rx: mpsc::UnboundedReceiver<(Outbound, oneshot::Sender<()>)>,
) {
    let mut conn: Option<Conn> = None;
    while let Some((out, done)) = rx.recv().await {
        let reply = exchange(&mut conn, &peer, &out).await;
        if reply.is_err() {
            conn = None;
        }
        match reply {
            Ok(Reply::Ack) => node.call(move |h| h.ack(&out)).await,
            Ok(Reply::Nack(r)) => node.call(move |h| h.nack(&out, r)).await,
            Err(e) => {
                debug!(%peer, "send failed: {e}");
                node.call(move |h| h.connection_failed(&out)).await
            }
        }
        node.inner.in_flight.fetch_sub(1, Ordering::SeqCst);
        let _ = done.send(());
    }
}

async fn exchange(conn: &mut Option<Conn>, peer: &Peer, out: &Outbound) -> std::io::Result<Reply> {
    use std::io::{Error, ErrorKind};
    if conn.is_none() {
        let stream = tokio::time::timeout(
            CONNECT_TIMEOUT,
            TcpStream::connect((peer.host.as_str(), peer.port)),
        )
        .await
        .map_err(|_| Error::new(ErrorKind::TimedOut, "connect timed out"))??;
        stream.set_nodelay(true)?;
        let (r, w) = stream.into_split();
        *conn = Some(Conn {
            reader: BufReader::new(r),
            writer: w,
        });
    }
    let c = conn.as_mut().expect("connected");
    let mut line = WireFrame::envelope(out.envelope.clone()).encode();
    line.push('\n');
    c.writer.write_all(line.as_bytes()).await?;
    let mut reply = String::new();
    let n = tokio::time::timeout(REPLY_TIMEOUT, c.reader.read_line(&mut reply))
        .await
        .map_err(|_| Error::new(ErrorKind::TimedOut, "no reply"))??;
    if n == 0 {
        return Err(Error::new(ErrorKind::UnexpectedEof, "peer closed"));
    }
    let frame = WireFrame::decode(reply.trim_end())
        .map_err(|_| Error::new(ErrorKind::InvalidData, "bad reply frame"))?;
    match (frame.kind, frame.reference) {
        (FrameKind::Ack, Some(r)) if r == out.envelope.id => Ok(Reply::Ack),
        (FrameKind::Nack, r) if r.is_none_or(|r| r == out.envelope.id) => {
            Ok(Reply::Nack(frame.reason.unwrap_or(NackReason::BadFrame)))
        }
        _ => Err(Error::new(
            ErrorKind::InvalidData,
            "reply for another envelope",
        )),
    }
}

/// Accepts bus connections until the listener fails.
pub async fn serve_bus(node: Node, listener: TcpListener) {
    loop {
        match listener.accept().await {
            Ok((stream, addr)) => {
                debug!(%addr, "bus connection");
                tokio::spawn(handle_bus_connection(node.clone(), stream));
            }
            Err(e) => {
                warn!("bus accept failed: {e}");
                tokio::time::sleep(Duration::from_millis(50)).await;
            }
        }
    }
}

/// Answers one frame: ack or nack. Malformed lines get a `BAD_FRAME` nack
/// and the connection stays open.
pub async fn answer(node: &Node, line: &str) -> WireFrame {
    let frame = match WireFrame::decode(line) {
        Ok(f) => f,
        Err(id) => return WireFrame::nack(id, NackReason::BadFrame),
    };
    match (frame.kind, frame.envelope) {
        (FrameKind::Envelope, Some(e)) => {
            let id = e.id;
            match node.call(move |h| h.receive(e)).await {
                Ok(_) => WireFrame::ack(id),
                Err(reason) => WireFrame::nack(Some(id), reason),
            }
        }
        _ => WireFrame::nack(frame.reference, NackReason::BadFrame),
    }
}

async fn handle_bus_connection(node: Node, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let (r, mut w) = stream.into_split();
    let mut lines = BufReader::new(r).lines();
    while let Ok(Some(line)) = lines.next_line().await {
        if line.trim().is_empty() {
            continue;
        }
        let mut reply = answer(&node, &line).await.encode();
        reply.push('\n');
        if w.write_all(reply.as_bytes()).await.is_err() {
            break;
        }
    }
}
