//! Scripted WebSocket clients: a bare protocol client, an operator driven by
//! the scripted operator model, and a player for recorded sessions.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message as WsMessage;
use tokio_tungstenite::{connect_async_with_config, MaybeTlsStream, WebSocketStream};

use resqsim_core::control::{operator_policy, ScriptedOperator};
use resqsim_core::{OperatorCommand, PerceptionMode, PhaseId, SafetyReport, Scenario, StateSnapshot};

use crate::protocol::{
    self, ByeReason, CommandFrame, ErrorFrame, Hello, Message, PhaseEvent, SafetyEvent,
    SafetyEventKind, SessionInfo, SnapshotFrame, PROTOCOL_VERSION,
};
use crate::record::{CommandOrigin, SessionRecord};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("server rejected the session: {:?}: {}", .0.code, .0.message)]
    Rejected(ErrorFrame),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("connection closed")]
    Closed,
}

pub struct Client {
    ws: Ws,
    pub info: SessionInfo,
    /// When the server's hello arrived; session time 0 as seen by the client.
    pub started: Instant,
}

pub fn hello(mode: PerceptionMode, scenario: Option<&str>) -> Hello {
    Hello {
        version: PROTOCOL_VERSION,
        mode,
        scenario: scenario.map(String::from),
        session: None,
    }
}

pub fn encode_command(seq: u64, command: OperatorCommand) -> String {
    protocol::encode(&Message::Command(CommandFrame { seq, command }))
}

/// Opens a WebSocket without the handshake.
pub async fn connect_raw(url: &str) -> Result<RawClient, ClientError> {
    let (ws, _) = connect_async_with_config(url, None, true).await?;
    Ok(RawClient { ws })
}

/// Connects and completes the handshake.
pub async fn connect(url: &str, hello: Hello) -> Result<Client, ClientError> {
    let mut raw = connect_raw(url).await?;
    raw.send(&Message::Hello(hello)).await?;
    loop {
        match raw.recv().await? {
            None => return Err(ClientError::Closed),
            Some(Message::Hello(h)) => {
                let info = h
                    .session
                    .ok_or_else(|| ClientError::Protocol("server hello without session".into()))?;
                return Ok(Client {
                    ws: raw.ws,
                    info,
                    started: Instant::now(),
                });
            }
            Some(Message::Error(e)) => return Err(ClientError::Rejected(e)),
            Some(other) => {
                return Err(ClientError::Protocol(format!(
                    "expected hello, got {}",
                    other.type_name()
                )))
            }
        }
    }
}

/// A connection with no protocol state, for probing the server.
pub struct RawClient {
    ws: Ws,
}

async fn recv_on(ws: &mut Ws) -> Result<Option<Message>, ClientError> {
    while let Some(frame) = ws.next().await {
        match frame? {
            WsMessage::Text(t) => {
                return protocol::decode(t.as_str())
                    .map(Some)
                    .map_err(|e| ClientError::Protocol(e.to_string()))
            }
            WsMessage::Close(_) => return Ok(None),
            _ => {}
        }
    }
    Ok(None)
}

impl RawClient {
    pub async fn send(&mut self, msg: &Message) -> Result<(), ClientError> {
        self.send_text(&protocol::encode(msg)).await
    }

    pub async fn send_text(&mut self, text: &str) -> Result<(), ClientError> {
        self.ws.send(WsMessage::Text(text.into())).await?;
        Ok(())
    }

    pub async fn send_binary(&mut self, bytes: Vec<u8>) -> Result<(), ClientError> {
        self.ws.send(WsMessage::Binary(bytes.into())).await?;
        Ok(())
    }

    /// Next protocol message; `None` once the server closed.
    pub async fn recv(&mut self) -> Result<Option<Message>, ClientError> {
        recv_on(&mut self.ws).await
    }
}

impl Client {
    pub async fn send(&mut self, msg: &Message) -> Result<(), ClientError> {
        self.ws.send(WsMessage::Text(protocol::encode(msg).into())).await?;
        Ok(())
    }

    pub async fn send_text(&mut self, text: &str) -> Result<(), ClientError> {
        self.ws.send(WsMessage::Text(text.into())).await?;
        Ok(())
    }

    pub async fn recv(&mut self) -> Result<Option<Message>, ClientError> {
        recv_on(&mut self.ws).await
    }

    /// Session time as the client sees it.
    pub fn session_time(&self) -> f64 {
        self.started.elapsed().as_secs_f64() * self.info.time_scale
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }

    /// Drops the connection without a close handshake.
    pub fn abort(self) {
        drop(self.ws);
    }
}

/// Everything a client received, in order of arrival.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    pub snapshots: Vec<(Instant, SnapshotFrame)>,
    pub phases: Vec<PhaseEvent>,
    pub safety: Vec<SafetyEvent>,
    pub errors: Vec<ErrorFrame>,
    pub bye: Option<ByeReason>,
}

impl Transcript {
    /// Records `msg`; returns false once the server said bye.
    pub fn push(&mut self, msg: Message) -> bool {
        match msg {
            Message::Snapshot(s) => self.snapshots.push((Instant::now(), s)),
            Message::PhaseEvent(p) => self.phases.push(p),
            Message::SafetyEvent(s) => self.safety.push(s),
            Message::Error(e) => self.errors.push(e),
            Message::Bye(b) => {
                self.bye = Some(b.reason);
                return false;
            }
            Message::Hello(_) | Message::Command(_) => {}
        }
        true
    }

    pub fn report(&self) -> Option<&SafetyReport> {
        self.safety.iter().find_map(|e| match &e.event {
            SafetyEventKind::Report { report } => Some(report),
            _ => None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedClientConfig {
    pub scenario: Scenario,
    pub mode: PerceptionMode,
    pub seed: u64,
    /// Drop the operator's reaction delay and noise.
    pub ideal: bool,
    /// Leave abruptly on entering this phase.
    pub leave_at: Option<PhaseId>,
}

/// Runs the scripted operator against a live session until the server says
/// bye (or `leave_at` is reached). The operator acts on the snapshots it
/// receives, `reaction_delay` behind the newest one.
pub async fn run_scripted(url: &str, cfg: &ScriptedClientConfig) -> Result<Transcript, ClientError> {
    let sc = &cfg.scenario;
    let mut client = connect(url, hello(cfg.mode, Some(&sc.name))).await?;
    let mut op = ScriptedOperator::new(cfg.mode, &sc.control.operator, sc);
    if cfg.ideal {
        op = op.ideal();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let every = 1.0 / sc.control.operator.command_rate_hz;
    let mut next_decision = 0.0;
    let mut history: VecDeque<StateSnapshot> = VecDeque::new();
    let mut seq = 0;
    let mut transcript = Transcript::default();
    let mut sending = true;

    loop {
        let msg = match client.recv().await {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(e) if transcript.bye.is_some() => {
                log::debug!("after bye: {e}");
                break;
            }
            Err(e) => return Err(e),
        };
        let newest = match &msg {
            Message::Snapshot(s) => Some(s.snapshot.clone()),
            Message::PhaseEvent(p) if Some(p.to) == cfg.leave_at => {
                transcript.push(msg);
                client.abort();
                return Ok(transcript);
            }
            _ => None,
        };
        if !transcript.push(msg) {
            break;
        }
        let Some(snap) = newest else { continue };
        let now = snap.time;
        history.push_back(snap);
        while history.len() > 1 && history[1].time <= now - op.reaction_delay {
            history.pop_front();
        }
        if now + 1e-9 >= next_decision {
            next_decision = now + every;
            let command = operator_policy(&mut op, &history[0], &mut rng);
            seq += 1;
            if !sending {
                continue;
            }
            if let Err(e) = client.send(&Message::Command(CommandFrame { seq, command })).await {
                // The server may close right after its bye; read what is left.
                log::debug!("command {seq} not sent: {e}");
                sending = false;
            }
        }
    }
    Ok(transcript)
}

/// The runtime timer rounds up to whole milliseconds; a blocking sleep lands
/// much closer to `target`.
async fn wait_until(target: Instant) {
    let now = Instant::now();
    if target > now {
        let _ = tokio::task::spawn_blocking(move || std::thread::sleep(target - now)).await;
    }
}

/// Plays back a recorded session's commands so that each lands in the
/// middle of the control period before the tick it was applied on, which
/// leaves half a period of slack for network and scheduling delay either
/// way. A recorded safety stop becomes a disconnect in the same period.
pub async fn replay_record(url: &str, record: &SessionRecord) -> Result<Transcript, ClientError> {
    let client = connect(url, hello(record.mode, Some(&record.scenario))).await?;
    let scale = client.info.time_scale;
    let period = 1.0 / client.info.control_rate_hz;
    let started = client.started;
    let (mut sink, mut stream) = client.ws.split();

    let reader = tokio::spawn(async move {
        let mut transcript = Transcript::default();
        while let Some(frame) = stream.next().await {
            match frame {
                Ok(WsMessage::Text(t)) => match protocol::decode(t.as_str()) {
                    Ok(m) => {
                        if !transcript.push(m) {
                            break;
                        }
                    }
                    Err(e) => return Err(ClientError::Protocol(e.to_string())),
                },
                Ok(WsMessage::Close(_)) => break,
                Ok(_) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(transcript)
    });

    for rc in &record.commands {
        let latency = match rc.origin {
            CommandOrigin::Operator => record.command_latency,
            CommandOrigin::SafetyStop => 0.0,
        };
        let send_at = (rc.applied_tick as f64 - 0.5) * period - latency;
        wait_until(started + Duration::from_secs_f64(send_at.max(0.0) / scale)).await;
        match rc.origin {
            CommandOrigin::Operator => {
                let frame = Message::Command(CommandFrame {
                    seq: rc.seq,
                    command: rc.command,
                });
                if sink.send(WsMessage::Text(protocol::encode(&frame).into())).await.is_err() {
                    break;
                }
            }
            CommandOrigin::SafetyStop => {
                drop(sink);
                return reader.await.map_err(|e| ClientError::Protocol(e.to_string()))?;
            }
        }
    }
    let transcript = reader.await.map_err(|e| ClientError::Protocol(e.to_string()))??;
    let _ = sink.close().await;
    Ok(transcript)
}
