//! Websocket transport: one blocking session loop per connection, fed by a
//! latest-value mailbox.

use crate::session::{Session, SessionAssets, SessionConfig, SessionRecord};
use crate::wire::FrameIn;
use crate::SessionError;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};
use tokio::sync::mpsc;

pub struct ServerState {
    pub config: SessionConfig,
    pub assets: SessionAssets,
    /// Trial records are appended here, one JSON object per line.
    pub records: Option<PathBuf>,
    records_lock: Mutex<()>,
    /// Completed trial records, also kept in memory.
    pub completed: Mutex<Vec<SessionRecord>>,
}

impl ServerState {
    pub fn new(config: SessionConfig, assets: SessionAssets, records: Option<PathBuf>) -> Result<Arc<Self>, SessionError> {
        config.validate()?;
        Ok(Arc::new(Self {
            config,
            assets,
            records,
            records_lock: Mutex::new(()),
            completed: Mutex::new(Vec::new()),
        }))
    }

    fn store(&self, record: SessionRecord) -> Result<(), SessionError> {
        if let Some(path) = &self.records {
            let _guard = self.records_lock.lock().expect("records lock poisoned");
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_vec(&record)?;
            line.push(b'\n');
            f.write_all(&line)?;
        }
        self.completed.lock().expect("records lock poisoned").push(record);
        Ok(())
    }
}

#[derive(Default)]
struct Mailbox {
    latest: Option<FrameIn>,
    received_at: Option<Instant>,
    closed: bool,
}

type SharedMailbox = Arc<(Mutex<Mailbox>, Condvar)>;

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new().route("/session", get(upgrade)).with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<ServerState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<ServerState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: Arc<ServerState>) {
    let (mut sink, mut stream) = socket.split();
    let mailbox: SharedMailbox = Arc::new((Mutex::new(Mailbox::default()), Condvar::new()));
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();

    let reader_box = mailbox.clone();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(text) => match serde_json::from_str::<FrameIn>(text.as_str()) {
                    Ok(frame) => {
                        let (lock, cv) = &*reader_box;
                        let mut m = lock.lock().expect("mailbox poisoned");
                        m.latest = Some(frame);
                        m.received_at = Some(Instant::now());
                        cv.notify_all();
                    }
                    Err(e) => log::warn!("dropping malformed input frame: {e}"),
                },
                Message::Close(_) => break,
                _ => {}
            }
        }
        let (lock, cv) = &*reader_box;
        lock.lock().expect("mailbox poisoned").closed = true;
        cv.notify_all();
    });

    let loop_box = mailbox.clone();
    let loop_state = state.clone();
    let session = tokio::task::spawn_blocking(move || run_loop(&loop_state, &loop_box, &tx));
    let writer = async {
        while let Some(text) = rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    };
    writer.await;
    match session.await {
        Ok(Err(e)) => log::error!("session failed: {e}"),
        Err(e) => log::error!("session task panicked: {e}"),
        Ok(Ok(())) => {}
    }
    reader.abort();
}

/// The session loop proper; runs on a blocking thread.
fn run_loop(state: &ServerState, mailbox: &SharedMailbox, tx: &mpsc::UnboundedSender<String>) -> Result<(), SessionError> {
    let cfg = &state.config;
    let ctx = state.assets.context();
    let mut session = Session::new(cfg, &ctx, state.assets.policy.as_ref())?;
    let stale_after = Duration::from_secs_f64(cfg.stale_after);
    let period = cfg.tick_period();
    let started = Instant::now();
    let send = |v: String| tx.send(v).is_ok();

    let mut connected = send(serde_json::to_string(&session.handshake())?) && send(serde_json::to_string(&session.frame(false))?);
    let mut next_tick = Instant::now() + period;
    while connected && !session.status().is_final() {
        let (lock, cv) = &**mailbox;
        let mut m = lock.lock().expect("mailbox poisoned");
        if cfg.lockstep {
            let want = session.tick_count();
            let deadline = Instant::now() + stale_after;
            while !m.closed && m.latest.is_none_or(|f| f.tick < want) {
                let now = Instant::now();
                if now >= deadline {
                    break;
                }
                m = cv.wait_timeout(m, deadline - now).expect("mailbox poisoned").0;
            }
        } else {
            let now = Instant::now();
            if next_tick > now {
                drop(m);
                std::thread::sleep(next_tick - now);
                m = lock.lock().expect("mailbox poisoned");
            }
            next_tick += period;
        }
        if m.closed {
            session.abort();
            break;
        }
        let input = m.latest.take();
        let last_seen = m.received_at.unwrap_or(started);
        drop(m);
        let stale = last_seen.elapsed() > stale_after;
        let frame = session.tick(input, stale)?;
        connected = send(serde_json::to_string(&frame)?);
    }
    if !connected {
        session.abort();
    }
    state.store(session.record())?;
    Ok(())
}
