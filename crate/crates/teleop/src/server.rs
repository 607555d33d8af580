//! HTTP and WebSocket front of the bridge.
//!
//! `GET /healthz` and `GET /scenario` are plain JSON; `/session` upgrades to
//! a WebSocket speaking [`crate::protocol`]; `/` serves the operator UI.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::serve::ListenerExt;
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use resqsim_core::harness::TrialLog;
use resqsim_core::snapshot::VisibilityConfig;
use resqsim_core::{PerceptionMode, Scenario};

use crate::protocol::{
    self, Bye, ByeReason, ErrorCode, ErrorFrame, FaultCounter, Hello, Message, SessionInfo,
    PROTOCOL_VERSION,
};
use crate::replay;
use crate::session::{
    start_session, Inbound, SessionClock, SessionConfig, SessionOutcome, EVENT_QUEUE_CAPACITY,
};

/// How long a new connection may take to send its `hello`.
const HELLO_TIMEOUT: Duration = Duration::from_secs(10);

const PLACEHOLDER_INDEX: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>resqsim</title></head>
<body>
<h1>resqsim teleoperation bridge</h1>
<p>No operator UI is installed. Start the server with a static directory to serve one here.</p>
<ul>
<li><code>GET /healthz</code> liveness</li>
<li><code>GET /scenario</code> active scenario</li>
<li><code>/session</code> WebSocket session endpoint</li>
</ul>
</body></html>
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Idle,
    Active,
    /// The session's one operator has come and gone.
    Done,
}

impl Slot {
    fn as_str(self) -> &'static str {
        match self {
            Slot::Idle => "idle",
            Slot::Active => "active",
            Slot::Done => "done",
        }
    }
}

struct Live {
    commands: mpsc::Sender<Inbound>,
    clock: SessionClock,
    info: SessionInfo,
}

enum Source {
    Live {
        cfg: SessionConfig,
        events: broadcast::Sender<Message>,
        slot: Mutex<Slot>,
        live: Mutex<Option<Live>>,
        done: Mutex<Option<oneshot::Sender<SessionOutcome>>>,
    },
    Replay {
        log: TrialLog,
        mode: PerceptionMode,
        speed: f64,
        snapshot_rate_hz: f64,
        visibility: VisibilityConfig,
    },
}

struct AppState {
    scenario: Scenario,
    source: Source,
}

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    pub log: TrialLog,
    pub scenario: Scenario,
    pub mode: PerceptionMode,
    pub speed: f64,
    pub snapshot_rate_hz: f64,
}

/// A running server. Dropping it does not stop the server; call
/// [`Server::shutdown`].
pub struct Server {
    addr: SocketAddr,
    outcome: Option<oneshot::Receiver<SessionOutcome>>,
    stop: oneshot::Sender<()>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Server {
    /// Serves a live session.
    pub async fn live(
        cfg: SessionConfig,
        static_dir: Option<PathBuf>,
        listener: TcpListener,
    ) -> std::io::Result<Server> {
        let (done_tx, done_rx) = oneshot::channel();
        let (events, _) = broadcast::channel(EVENT_QUEUE_CAPACITY);
        let state = AppState {
            scenario: cfg.scenario.clone(),
            source: Source::Live {
                cfg,
                events,
                slot: Mutex::new(Slot::Idle),
                live: Mutex::new(None),
                done: Mutex::new(Some(done_tx)),
            },
        };
        Self::start(state, static_dir, listener, Some(done_rx)).await
    }

    /// Streams a recorded trial to any client that connects.
    pub async fn replay(
        cfg: ReplayConfig,
        static_dir: Option<PathBuf>,
        listener: TcpListener,
    ) -> std::io::Result<Server> {
        let state = AppState {
            scenario: cfg.scenario,
            source: Source::Replay {
                log: cfg.log,
                mode: cfg.mode,
                speed: cfg.speed,
                snapshot_rate_hz: cfg.snapshot_rate_hz,
                visibility: VisibilityConfig::default(),
            },
        };
        Self::start(state, static_dir, listener, None).await
    }

    async fn start(
        state: AppState,
        static_dir: Option<PathBuf>,
        listener: TcpListener,
        outcome: Option<oneshot::Receiver<SessionOutcome>>,
    ) -> std::io::Result<Server> {
        let addr = listener.local_addr()?;
        let app = router(Arc::new(state), static_dir);
        let (stop, stop_rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            // Frames are small and latency-sensitive.
            let listener = listener.tap_io(|tcp| {
                if let Err(e) = tcp.set_nodelay(true) {
                    log::debug!("TCP_NODELAY: {e}");
                }
            });
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = stop_rx.await;
                })
                .await
        });
        Ok(Server {
            addr,
            outcome,
            stop,
            task,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn session_url(&self) -> String {
        format!("ws://{}/session", self.addr)
    }

    /// Waits for the live session to end. `None` for replay servers or when
    /// already taken.
    pub async fn session_outcome(&mut self) -> Option<SessionOutcome> {
        self.outcome.take()?.await.ok()
    }

    pub async fn shutdown(self) -> std::io::Result<()> {
        let _ = self.stop.send(());
        match tokio::time::timeout(Duration::from_secs(2), self.task).await {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => Err(std::io::Error::other(e)),
            // Open WebSockets hold graceful shutdown; stop waiting.
            Err(_) => Ok(()),
        }
    }
}

fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/healthz", get(healthz))
        .route("/scenario", get(scenario))
        .route("/session", get(session_ws));
    let app = match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER_INDEX) })),
    };
    app.with_state(state)
}

async fn healthz(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let (kind, mode, session) = match &app.source {
        Source::Live { cfg, slot, .. } => {
            let s = *slot.lock().unwrap();
            ("live", cfg.mode, s.as_str())
        }
        Source::Replay { mode, .. } => ("replay", *mode, "replay"),
    };
    Json(json!({
        "status": "ok",
        "kind": kind,
        "protocol_version": PROTOCOL_VERSION,
        "scenario": app.scenario.name,
        "mode": mode,
        "session": session,
    }))
}

async fn scenario(State(app): State<Arc<AppState>>) -> Response {
    (
        [(header::CONTENT_TYPE, "application/json")],
        app.scenario.to_json_pretty(),
    )
        .into_response()
}

async fn session_ws(ws: WebSocketUpgrade, State(app): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| async move {
        match &app.source {
            Source::Live { .. } => operator_connection(socket, app).await,
            Source::Replay { .. } => replay_connection(socket, app).await,
        }
    })
}

async fn send(socket: &mut WebSocket, msg: &Message) -> bool {
    socket
        .send(WsMessage::Text(protocol::encode(msg).into()))
        .await
        .is_ok()
}

async fn reject(socket: &mut WebSocket, err: ErrorFrame) {
    let _ = send(socket, &Message::Error(err)).await;
    let _ = socket.send(WsMessage::Close(None)).await;
}

enum Handshake {
    Accepted(Hello),
    /// Connection is finished (rejected, faulted, or closed).
    Closed,
}

/// Reads frames until a valid `hello`, answering bad frames with error frames.
async fn read_hello(socket: &mut WebSocket, faults: &mut FaultCounter) -> Handshake {
    loop {
        let frame = match tokio::time::timeout(HELLO_TIMEOUT, socket.recv()).await {
            Err(_) => {
                reject(socket, ErrorFrame {
                    code: ErrorCode::Unexpected,
                    message: "no hello received".into(),
                    supported_versions: None,
                })
                .await;
                return Handshake::Closed;
            }
            Ok(None) | Ok(Some(Err(_))) => return Handshake::Closed,
            Ok(Some(Ok(f))) => f,
        };
        let text = match frame {
            WsMessage::Text(t) => t,
            WsMessage::Close(_) => return Handshake::Closed,
            WsMessage::Ping(_) | WsMessage::Pong(_) => continue,
            WsMessage::Binary(_) => {
                if fault(socket, faults, ErrorCode::Malformed, "binary frames are not supported").await {
                    return Handshake::Closed;
                }
                continue;
            }
        };
        match protocol::decode(text.as_str()) {
            Ok(Message::Hello(h)) => {
                faults.ok();
                return Handshake::Accepted(h);
            }
            Ok(other) => {
                let msg = format!("expected hello, got {}", other.type_name());
                if fault(socket, faults, ErrorCode::Unexpected, &msg).await {
                    return Handshake::Closed;
                }
            }
            Err(e) => {
                if fault(socket, faults, e.code(), &e.to_string()).await {
                    return Handshake::Closed;
                }
            }
        }
    }
}

/// Sends an error frame and counts the fault. Returns true when the
/// connection has been dropped.
async fn fault(socket: &mut WebSocket, faults: &mut FaultCounter, code: ErrorCode, message: &str) -> bool {
    let over = faults.fault();
    let _ = send(socket, &Message::error(code, message)).await;
    if over {
        let _ = send(
            socket,
            &Message::Bye(Bye {
                reason: ByeReason::ProtocolFaults,
            }),
        )
        .await;
        let _ = socket.send(WsMessage::Close(None)).await;
    }
    over
}

async fn operator_connection(mut socket: WebSocket, app: Arc<AppState>) {
    let Source::Live {
        cfg,
        events,
        slot,
        live,
        done,
    } = &app.source
    else {
        return;
    };
    let mut faults = FaultCounter::default();
    let hello = match read_hello(&mut socket, &mut faults).await {
        Handshake::Accepted(h) => h,
        Handshake::Closed => return,
    };
    if let Err(e) = protocol::check_hello(&hello, cfg.mode, &app.scenario.name) {
        reject(&mut socket, e).await;
        return;
    }
    let previous = {
        let mut s = slot.lock().unwrap();
        let prev = *s;
        if prev == Slot::Idle {
            *s = Slot::Active;
        }
        prev
    };
    let refusal = match previous {
        Slot::Idle => None,
        Slot::Active => Some((ErrorCode::Busy, "another operator holds this session")),
        Slot::Done => Some((ErrorCode::Unexpected, "session has ended")),
    };
    if let Some((code, message)) = refusal {
        reject(&mut socket, ErrorFrame {
            code,
            message: message.into(),
            supported_versions: None,
        })
        .await;
        return;
    }

    // Subscribe before the loop starts so the first snapshot is not missed.
    let mut outbound = events.subscribe();
    let (commands, clock, info) = {
        let mut l = live.lock().unwrap();
        let h = l.get_or_insert_with(|| {
            let done = done.lock().unwrap().take().expect("session started once");
            let h = start_session(cfg.clone(), events.clone(), done);
            Live {
                commands: h.commands,
                clock: h.clock,
                info: h.info,
            }
        });
        (h.commands.clone(), h.clock, h.info.clone())
    };
    log::info!("operator connected to session {}", info.id);
    let server_hello = Message::Hello(Hello {
        version: PROTOCOL_VERSION,
        mode: cfg.mode,
        scenario: Some(app.scenario.name.clone()),
        session: Some(info),
    });
    let session_over = if send(&mut socket, &server_hello).await {
        pump(&mut socket, &mut outbound, &commands, &clock, &mut faults).await
    } else {
        false
    };
    if !session_over {
        let _ = commands
            .send(Inbound::Disconnect { at: clock.now() })
            .await;
        log::info!("operator disconnected");
    }
    *slot.lock().unwrap() = Slot::Done;
}

/// Moves frames both ways until either side ends. Returns true when the
/// session itself ended (its `bye` was forwarded).
async fn pump(
    socket: &mut WebSocket,
    outbound: &mut broadcast::Receiver<Message>,
    commands: &mpsc::Sender<Inbound>,
    clock: &SessionClock,
    faults: &mut FaultCounter,
) -> bool {
    loop {
        tokio::select! {
            msg = outbound.recv() => match msg {
                Ok(m) => {
                    let last = matches!(m, Message::Bye(_));
                    if !send(socket, &m).await {
                        return false;
                    }
                    if last {
                        let _ = socket.send(WsMessage::Close(None)).await;
                        return true;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::debug!("operator lagging; dropped {n} frames");
                }
                Err(broadcast::error::RecvError::Closed) => return true,
            },
            frame = socket.recv() => {
                let text = match frame {
                    None | Some(Err(_)) => return false,
                    Some(Ok(WsMessage::Close(_))) => return false,
                    Some(Ok(WsMessage::Ping(_) | WsMessage::Pong(_))) => continue,
                    Some(Ok(WsMessage::Binary(_))) => {
                        if fault(socket, faults, ErrorCode::Malformed, "binary frames are not supported").await {
                            return false;
                        }
                        continue;
                    }
                    Some(Ok(WsMessage::Text(t))) => t,
                };
                let received_at = clock.now();
                match protocol::decode(text.as_str()) {
                    Ok(Message::Command(c)) => {
                        faults.ok();
                        let inbound = Inbound::Command { seq: c.seq, received_at, command: c.command };
                        match commands.try_send(inbound) {
                            Ok(()) => {}
                            Err(mpsc::error::TrySendError::Full(_)) => {
                                if fault(socket, faults, ErrorCode::Overflow, "command queue full").await {
                                    return false;
                                }
                            }
                            // The loop has exited; its bye is on the way.
                            Err(mpsc::error::TrySendError::Closed(_)) => {}
                        }
                    }
                    Ok(Message::Bye(_)) => {
                        let _ = socket.send(WsMessage::Close(None)).await;
                        return false;
                    }
                    Ok(other) => {
                        let msg = format!("`{}` is not accepted from the operator", other.type_name());
                        if fault(socket, faults, ErrorCode::Unexpected, &msg).await {
                            return false;
                        }
                    }
                    // Unknown types are answered but do not count against the client.
                    Err(e @ protocol::ProtocolError::UnknownType(_)) => {
                        let _ = send(socket, &Message::error(e.code(), e.to_string())).await;
                    }
                    Err(e) => {
                        if fault(socket, faults, e.code(), &e.to_string()).await {
                            return false;
                        }
                    }
                }
            }
        }
    }
}

async fn replay_connection(mut socket: WebSocket, app: Arc<AppState>) {
    let Source::Replay {
        log,
        mode,
        speed,
        snapshot_rate_hz,
        visibility,
    } = &app.source
    else {
        return;
    };
    let mut faults = FaultCounter::default();
    let hello = match read_hello(&mut socket, &mut faults).await {
        Handshake::Accepted(h) => h,
        Handshake::Closed => return,
    };
    if let Err(e) = protocol::check_hello(&hello, *mode, &app.scenario.name) {
        reject(&mut socket, e).await;
        return;
    }
    let info = SessionInfo {
        id: format!("replay-{}", log.header.seed),
        config_hash: log.header.config_hash.clone(),
        seed: log.header.seed,
        control_rate_hz: log.header.control_rate_hz,
        snapshot_rate_hz: *snapshot_rate_hz,
        time_scale: *speed,
    };
    let server_hello = Message::Hello(Hello {
        version: PROTOCOL_VERSION,
        mode: *mode,
        scenario: Some(app.scenario.name.clone()),
        session: Some(info),
    });
    if !send(&mut socket, &server_hello).await {
        return;
    }
    let frames = replay::frames(log, &app.scenario, *mode, visibility, *speed, *snapshot_rate_hz);
    let start = tokio::time::Instant::now();
    for (offset, msg) in frames {
        let due = start + offset;
        loop {
            tokio::select! {
                _ = tokio::time::sleep_until(due) => break,
                frame = socket.recv() => match frame {
                    None | Some(Err(_)) | Some(Ok(WsMessage::Close(_))) => return,
                    // Commands are ignored during playback.
                    Some(Ok(_)) => {}
                },
            }
        }
        if !send(&mut socket, &msg).await {
            return;
        }
    }
    let _ = send(
        &mut socket,
        &Message::Bye(Bye {
            reason: ByeReason::EndOfLog,
        }),
    )
    .await;
    let _ = socket.send(WsMessage::Close(None)).await;
}
