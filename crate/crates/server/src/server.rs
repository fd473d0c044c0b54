use std::collections::HashSet;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::io::{AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::protocol::WebSocketConfig;
use tokio_tungstenite::tungstenite::Message;

use panelguide_core::fixtures::FixtureSet;
use panelguide_core::ingest::OcrClient;
use panelguide_core::llm::ScriptedBackend;
use panelguide_core::pipeline::Compiler;
use panelguide_core::session::{Clock, SystemClock};
use panelguide_core::wire::MAX_LINE_BYTES;
use panelguide_core::PanelSchema;

use crate::connection::{Connection, Input};
use crate::lines::{Frame, LineReader};

pub const DEFAULT_PORT: u16 = 9000;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("port {0} leaves no room for the WebSocket port above it")]
    PortRange(u16),
    #[error("cannot create log directory {path}: {source}")]
    LogDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot start runtime: {0}")]
    Runtime(#[source] std::io::Error),
}

/// Everything a server needs; the TCP port is `port`, WebSocket `port + 1`.
/// Port 0 picks free ports for both.
#[derive(Clone)]
pub struct ServerConfig {
    pub host: IpAddr,
    pub port: u16,
    pub compiler: Compiler,
    pub ocr: Arc<dyn OcrClient>,
    pub fixtures: Arc<FixtureSet>,
    pub log_dir: PathBuf,
    pub clock: Arc<dyn Clock>,
    pub min_ocr_words: usize,
}

impl ServerConfig {
    /// Loopback server over the bundled fixtures with scripted model and OCR.
    pub fn scripted(log_dir: impl Into<PathBuf>) -> Self {
        Self::with_fixtures(FixtureSet::bundled(), log_dir)
    }

    pub fn with_fixtures(fixtures: FixtureSet, log_dir: impl Into<PathBuf>) -> Self {
        let schema = Arc::new(PanelSchema::default_panel());
        let backend = Arc::new(ScriptedBackend::from_fixtures(&fixtures));
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            compiler: Compiler::new(schema, backend),
            ocr: Arc::new(fixtures.scripted_ocr()),
            fixtures: Arc::new(fixtures),
            log_dir: log_dir.into(),
            clock: Arc::new(SystemClock::new()),
            min_ocr_words: 0,
        }
    }

    pub fn port(mut self, port: u16) -> Self {
        self.port = port;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }
}

/// State common to every connection of one server.
pub(crate) struct Shared {
    pub(crate) compiler: Compiler,
    pub(crate) ocr: Arc<dyn OcrClient>,
    pub(crate) fixtures: Arc<FixtureSet>,
    pub(crate) log_dir: PathBuf,
    pub(crate) clock: Arc<dyn Clock>,
    pub(crate) min_ocr_words: usize,
    next_id: AtomicU64,
    live_ids: Mutex<HashSet<String>>,
}

impl Shared {
    pub(crate) fn allocate_id(&self) -> String {
        loop {
            let n = self.next_id.fetch_add(1, Ordering::Relaxed);
            let id = format!("session-{n}");
            if self.reserve(&id) {
                return id;
            }
        }
    }

    /// Claims a session id among the live connections.
    pub(crate) fn reserve(&self, id: &str) -> bool {
        self.live_ids.lock().expect("id lock").insert(id.to_string())
    }

    pub(crate) fn release(&self, id: &str) {
        self.live_ids.lock().expect("id lock").remove(id);
    }
}

/// A running server. Dropping it without [`ServerHandle::shutdown`] leaves
/// the tasks running on their runtime.
pub struct ServerHandle {
    tcp_addr: SocketAddr,
    ws_addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> SocketAddr {
        self.ws_addr
    }

    /// Stops accepting, closes every connection and waits for the listeners.
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        for task in self.tasks {
            let _ = task.await;
        }
    }

    /// Runs until the listeners stop.
    pub async fn wait(self) {
        for task in self.tasks {
            let _ = task.await;
        }
    }
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::Bind { addr, source })
}

/// Binds both listeners and starts accepting.
pub async fn serve(config: ServerConfig) -> Result<ServerHandle, ServerError> {
    std::fs::create_dir_all(&config.log_dir).map_err(|source| ServerError::LogDir {
        path: config.log_dir.clone(),
        source,
    })?;
    let (tcp, ws) = if config.port == 0 {
        let any = SocketAddr::new(config.host, 0);
        (bind(any).await?, bind(any).await?)
    } else {
        let ws_port = config
            .port
            .checked_add(1)
            .ok_or(ServerError::PortRange(config.port))?;
        (
            bind(SocketAddr::new(config.host, config.port)).await?,
            bind(SocketAddr::new(config.host, ws_port)).await?,
        )
    };
    let tcp_addr = tcp.local_addr().map_err(|source| ServerError::Bind {
        addr: SocketAddr::new(config.host, config.port),
        source,
    })?;
    let ws_addr = ws.local_addr().map_err(|source| ServerError::Bind {
        addr: SocketAddr::new(config.host, config.port),
        source,
    })?;

    let shared = Arc::new(Shared {
        compiler: config.compiler,
        ocr: config.ocr,
        fixtures: config.fixtures,
        log_dir: config.log_dir,
        clock: config.clock,
        min_ocr_words: config.min_ocr_words,
        next_id: AtomicU64::new(1),
        live_ids: Mutex::new(HashSet::new()),
    });
    let (shutdown, rx) = watch::channel(false);
    let tasks = vec![
        tokio::spawn(accept_loop(tcp, shared.clone(), rx.clone(), Transport::Tcp)),
        tokio::spawn(accept_loop(ws, shared, rx, Transport::WebSocket)),
    ];
    tracing::info!(%tcp_addr, %ws_addr, "listening");
    Ok(ServerHandle {
        tcp_addr,
        ws_addr,
        shutdown,
        tasks,
    })
}

#[derive(Clone, Copy)]
enum Transport {
    Tcp,
    WebSocket,
}

async fn accept_loop(
    listener: TcpListener,
    shared: Arc<Shared>,
    mut shutdown: watch::Receiver<bool>,
    transport: Transport,
) {
    loop {
        let accepted = tokio::select! {
            a = listener.accept() => a,
            _ = shutdown.changed() => break,
        };
        let (stream, peer) = match accepted {
            Ok(pair) => pair,
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                // Typically descriptor exhaustion; back off instead of spinning.
                tokio::time::sleep(Duration::from_millis(50)).await;
                continue;
            }
        };
        tracing::debug!(%peer, "client connected");
        let shared = shared.clone();
        let shutdown = shutdown.clone();
        tokio::spawn(async move {
            match transport {
                Transport::Tcp => serve_tcp(stream, shared, shutdown).await,
                Transport::WebSocket => serve_ws(stream, shared, shutdown).await,
            }
        });
    }
}

async fn serve_tcp(stream: TcpStream, shared: Arc<Shared>, shutdown: watch::Receiver<bool>) {
    let _ = stream.set_nodelay(true);
    let (read, mut write) = stream.into_split();
    let (inbox, rx) = mpsc::unbounded_channel();
    let (out, mut out_rx) = mpsc::unbounded_channel::<String>();

    let feed = inbox.clone();
    let reader = tokio::spawn(async move {
        let mut lines = LineReader::new(BufReader::new(read));
        while let Ok(Some(frame)) = lines.next_frame().await {
            if feed.send(Input::Frame(frame)).is_err() {
                return;
            }
        }
        let _ = feed.send(Input::Closed);
    });
    let writer = tokio::spawn(async move {
        while let Some(mut line) = out_rx.recv().await {
            line.push('\n');
            if write.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
        let _ = write.shutdown().await;
    });

    Connection::new(shared, out, inbox).run(rx, shutdown).await;
    reader.abort();
    let _ = writer.await;
}

async fn serve_ws(stream: TcpStream, shared: Arc<Shared>, shutdown: watch::Receiver<bool>) {
    let _ = stream.set_nodelay(true);
    let mut config = WebSocketConfig::default();
    config.max_message_size = Some(4 * MAX_LINE_BYTES);
    config.max_frame_size = Some(4 * MAX_LINE_BYTES);
    let ws = match tokio_tungstenite::accept_async_with_config(stream, Some(config)).await {
        Ok(ws) => ws,
        Err(e) => {
            tracing::debug!("websocket handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let (inbox, rx) = mpsc::unbounded_channel();
    let (out, mut out_rx) = mpsc::unbounded_channel::<String>();

    let feed = inbox.clone();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = source.next().await {
            let text = match msg {
                Message::Text(t) => t.as_str().to_owned(),
                Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
                Message::Close(_) => break,
                _ => continue,
            };
            let frame = if text.len() > MAX_LINE_BYTES {
                Frame::TooLong
            } else {
                Frame::Line(text)
            };
            if feed.send(Input::Frame(frame)).is_err() {
                return;
            }
        }
        let _ = feed.send(Input::Closed);
    });
    let writer = tokio::spawn(async move {
        while let Some(line) = out_rx.recv().await {
            if sink.send(Message::text(line)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    Connection::new(shared, out, inbox).run(rx, shutdown).await;
    reader.abort();
    let _ = writer.await;
}

/// A server on its own runtime, for blocking callers such as the CLI and
/// the simulated operator. Dropping it shuts the server down.
pub struct BackgroundServer {
    runtime: Option<tokio::runtime::Runtime>,
    handle: Option<ServerHandle>,
    tcp_addr: SocketAddr,
    ws_addr: SocketAddr,
}

impl BackgroundServer {
    pub fn start(config: ServerConfig) -> Result<Self, ServerError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(ServerError::Runtime)?;
        let handle = runtime.block_on(serve(config))?;
        Ok(Self {
            tcp_addr: handle.tcp_addr(),
            ws_addr: handle.ws_addr(),
            runtime: Some(runtime),
            handle: Some(handle),
        })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> SocketAddr {
        self.ws_addr
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let (Some(rt), Some(handle)) = (self.runtime.take(), self.handle.take()) {
            rt.block_on(handle.shutdown());
            rt.shutdown_timeout(Duration::from_secs(1));
        }
    }
}
