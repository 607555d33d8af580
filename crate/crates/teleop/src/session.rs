//! The real-time stepping loop behind a live session.
//!
//! The loop runs on its own thread and owns the engine. Network tasks talk to
//! it through two queues: a bounded command queue in, and a broadcast of
//! outbound messages that drops the oldest frames when a reader falls behind.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use tokio::sync::{broadcast, mpsc, oneshot};

use resqsim_core::harness::{merge_commands, Engine, TrialLog};
use resqsim_core::snapshot::{apply_visibility, VisibilityConfig};
use resqsim_core::{OperatorCommand, PerceptionMode, SafetyReport, Scenario};

use crate::protocol::{
    Bye, ByeReason, Message, PhaseEvent, SafetyEvent, SafetyEventKind, SessionInfo, SnapshotFrame,
};
use crate::record::{CommandOrigin, RecordedCommand, SessionRecord, SessionStatus, RECORD_SCHEMA_VERSION};

pub const DEFAULT_SNAPSHOT_RATE_HZ: f64 = 30.0;
pub const COMMAND_QUEUE_CAPACITY: usize = 256;
pub const EVENT_QUEUE_CAPACITY: usize = 64;

/// Base, turn and belt speed below which a safety stop counts as complete.
const HALT_SPEED: f64 = 1e-3;
/// Longest the loop keeps stepping after a safety stop, s.
const MAX_STOP_TIME: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub scenario: Scenario,
    pub mode: PerceptionMode,
    pub seed: u64,
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
    /// Artificial delay added to every operator command, s.
    pub command_latency: f64,
    pub snapshot_rate_hz: f64,
    pub visibility: VisibilityConfig,
    /// Where to write the session record and trial log.
    pub record_dir: Option<PathBuf>,
}

impl SessionConfig {
    pub fn new(scenario: Scenario, mode: PerceptionMode, seed: u64) -> Self {
        Self {
            scenario,
            mode,
            seed,
            time_scale: 1.0,
            command_latency: 0.0,
            snapshot_rate_hz: DEFAULT_SNAPSHOT_RATE_HZ,
            visibility: VisibilityConfig::default(),
            record_dir: None,
        }
    }
}

/// Session time: simulated seconds since the loop started.
#[derive(Debug, Clone, Copy)]
pub struct SessionClock {
    start: Instant,
    time_scale: f64,
}

impl SessionClock {
    pub fn new(start: Instant, time_scale: f64) -> Self {
        Self { start, time_scale }
    }

    pub fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * self.time_scale
    }

    pub fn instant_at(&self, t: f64) -> Instant {
        self.start + Duration::from_secs_f64((t / self.time_scale).max(0.0))
    }

    fn sleep_until(&self, t: f64) {
        let due = self.instant_at(t);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inbound {
    Command {
        seq: u64,
        received_at: f64,
        command: OperatorCommand,
    },
    /// The operator connection closed.
    Disconnect { at: f64 },
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub record: SessionRecord,
    pub log: TrialLog,
    pub record_path: Option<PathBuf>,
    /// Set when writing the record failed.
    pub write_error: Option<String>,
}

pub struct SessionHandle {
    pub commands: mpsc::Sender<Inbound>,
    pub clock: SessionClock,
    pub info: SessionInfo,
}

pub fn new_session_id(seed: u64) -> String {
    let ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    format!("{ms}-{seed}")
}

/// Starts the stepping loop on a new thread. Outbound messages go to
/// `events`; the outcome is sent on `done` once the loop exits.
pub fn start_session(
    cfg: SessionConfig,
    events: broadcast::Sender<Message>,
    done: oneshot::Sender<SessionOutcome>,
) -> SessionHandle {
    let (tx, rx) = mpsc::channel(COMMAND_QUEUE_CAPACITY);
    let clock = SessionClock::new(Instant::now(), cfg.time_scale);
    let info = SessionInfo {
        id: new_session_id(cfg.seed),
        config_hash: cfg.scenario.config_hash(),
        seed: cfg.seed,
        control_rate_hz: cfg.scenario.sim.control_rate_hz,
        snapshot_rate_hz: cfg.snapshot_rate_hz,
        time_scale: cfg.time_scale,
    };
    let id = info.id.clone();
    thread::Builder::new()
        .name(format!("session-{id}"))
        .spawn(move || {
            let outcome = run_loop(cfg, id, clock, rx, &events);
            let _ = done.send(outcome);
        })
        .expect("spawn session thread");
    SessionHandle {
        commands: tx,
        clock,
        info,
    }
}

struct Pending {
    seq: u64,
    received_at: f64,
    due_at: f64,
    command: OperatorCommand,
}

struct Publisher<'a> {
    events: &'a broadcast::Sender<Message>,
    seq: u64,
}

impl Publisher<'_> {
    fn send(&self, msg: Message) {
        // No subscribers is fine; the loop runs regardless.
        let _ = self.events.send(msg);
    }

    fn snapshot(&mut self, engine: &Engine, cfg: &SessionConfig) {
        self.seq += 1;
        let snapshot = apply_visibility(&engine.snapshot(), cfg.mode, &cfg.visibility);
        self.send(Message::Snapshot(SnapshotFrame {
            seq: self.seq,
            tick: engine.control_tick_index(),
            snapshot,
        }));
    }
}

fn run_loop(
    cfg: SessionConfig,
    session_id: String,
    clock: SessionClock,
    mut rx: mpsc::Receiver<Inbound>,
    events: &broadcast::Sender<Message>,
) -> SessionOutcome {
    let sc = cfg.scenario.clone();
    let period = sc.control_dt();
    let rate = sc.sim.control_rate_hz;
    let frame_slot = |k: u64| (k as f64 * cfg.snapshot_rate_hz / rate).floor() as u64;
    let mut engine = Engine::new(sc.clone(), cfg.seed, Some(cfg.mode));
    let mut out = Publisher { events, seq: 0 };
    out.snapshot(&engine, &cfg);

    let mut held = OperatorCommand::zero(0.0);
    let mut pending: VecDeque<Pending> = VecDeque::new();
    let mut applied: Vec<RecordedCommand> = Vec::new();
    let mut stopped_at: Option<u64> = None;
    let mut skipped_frames = 0u64;

    let (status, message, report) = loop {
        let k = engine.control_tick_index();
        let t_k = k as f64 * period;
        clock.sleep_until(t_k);

        let mut disconnect = None;
        loop {
            match rx.try_recv() {
                Ok(Inbound::Command {
                    seq,
                    received_at,
                    command,
                }) => {
                    if stopped_at.is_none() {
                        pending.push_back(Pending {
                            seq,
                            received_at,
                            due_at: received_at + cfg.command_latency,
                            command,
                        });
                    }
                }
                Ok(Inbound::Disconnect { at }) => disconnect = disconnect.or(Some(at)),
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => {
                    disconnect = disconnect.or(Some(clock.now()));
                    break;
                }
            }
        }

        // A command received at t applies from the first tick starting after t.
        let n_due = pending.iter().take_while(|p| p.due_at < t_k).count();
        let due: Vec<Pending> = pending.drain(..n_due).collect();
        let mut batch: Vec<OperatorCommand> = due.iter().map(|p| p.command).collect();
        for p in &due {
            applied.push(RecordedCommand {
                seq: p.seq,
                received_at: p.received_at,
                due_at: p.due_at,
                applied_tick: k,
                origin: CommandOrigin::Operator,
                command: p.command,
            });
        }
        if let (None, Some(at)) = (stopped_at, disconnect) {
            // Zero velocity; the belt keeps its state so sync holds until halt.
            let merged = merge_commands(&held, batch.iter());
            let mut stop = OperatorCommand::zero(at);
            stop.belt_enable = merged.belt_enable;
            batch.push(stop);
            applied.push(RecordedCommand {
                seq: 0,
                received_at: at,
                due_at: at,
                applied_tick: k,
                origin: CommandOrigin::SafetyStop,
                command: stop,
            });
            stopped_at = Some(k);
            pending.clear();
            log::warn!("session {session_id}: operator left at t={at:.3}; safety stop");
            out.send(Message::SafetyEvent(SafetyEvent {
                tick: k,
                t: t_k,
                event: SafetyEventKind::Warning {
                    message: "operator disconnected; safety stop".into(),
                },
            }));
        }
        held = merge_commands(&held, batch.iter());

        let tick = match engine.control_tick(&held) {
            Ok(t) => t,
            Err(e) => break (SessionStatus::Aborted, Some(e.to_string()), None),
        };
        held.strap_trigger = false;
        let k1 = engine.control_tick_index();
        let t = engine.world().time;
        if let Some((from, to)) = tick.phase_change {
            out.send(Message::PhaseEvent(PhaseEvent { tick: k1, t, from, to }));
        }
        if let Some(c) = tick.contact {
            out.send(Message::SafetyEvent(SafetyEvent {
                tick: k1,
                t,
                event: SafetyEventKind::Contact {
                    relative_speed: c.relative_speed,
                },
            }));
        }
        if frame_slot(k1) != frame_slot(k) {
            // Drop frames, never physics steps, when behind schedule.
            if clock.now() - k1 as f64 * period > 1.0 / cfg.snapshot_rate_hz {
                skipped_frames += 1;
            } else {
                out.snapshot(&engine, &cfg);
            }
        }

        if engine.finished() {
            break match engine.metrics() {
                Ok(m) => (SessionStatus::Completed, None, Some(m.report)),
                Err(e) => (SessionStatus::Aborted, Some(e.to_string()), None),
            };
        }
        if let Some(ks) = stopped_at {
            let r = &engine.world().robot;
            let halted = [r.v_base, r.omega, r.v_belt].iter().all(|v| v.abs() < HALT_SPEED);
            if halted || (k1 - ks) as f64 * period > MAX_STOP_TIME {
                break (SessionStatus::Interrupted, Some("operator disconnected".into()), None);
            }
        }
        let w = engine.world();
        if w.contact.is_none() && w.time >= sc.sim.contact_budget {
            break (
                SessionStatus::Aborted,
                Some(format!("no contact within {} s", sc.sim.contact_budget)),
                None,
            );
        }
        if w.time >= sc.sim.trial_budget {
            break (
                SessionStatus::Aborted,
                Some(format!("trial not finished within {} s", sc.sim.trial_budget)),
                None,
            );
        }
    };
    if skipped_frames > 0 {
        log::warn!("session {session_id}: skipped {skipped_frames} snapshot frames");
    }

    let k = engine.control_tick_index();
    let t = engine.world().time;
    finish_messages(&out, k, t, status, message.as_deref(), report.as_ref());
    let mut record = SessionRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        session_id,
        scenario: sc.name.clone(),
        config_hash: sc.config_hash(),
        mode: cfg.mode,
        seed: cfg.seed,
        time_scale: cfg.time_scale,
        command_latency: cfg.command_latency,
        status,
        message,
        ticks: k,
        report,
        commands: applied,
        log: None,
        imu: None,
    };
    let log = engine.into_log();
    let (record_path, write_error) = match &cfg.record_dir {
        Some(dir) => match record.write(dir, &log) {
            Ok(p) => (Some(p), None),
            Err(e) => {
                log::error!("writing session record: {e}");
                (None, Some(e.to_string()))
            }
        },
        None => (None, None),
    };
    SessionOutcome {
        record,
        log,
        record_path,
        write_error,
    }
}

fn finish_messages(
    out: &Publisher<'_>,
    tick: u64,
    t: f64,
    status: SessionStatus,
    message: Option<&str>,
    report: Option<&SafetyReport>,
) {
    let reason = match (status, report) {
        (SessionStatus::Completed, Some(r)) => {
            out.send(Message::SafetyEvent(SafetyEvent {
                tick,
                t,
                event: SafetyEventKind::Report { report: r.clone() },
            }));
            ByeReason::Completed
        }
        (SessionStatus::Interrupted, _) => ByeReason::Interrupted,
        _ => {
            out.send(Message::SafetyEvent(SafetyEvent {
                tick,
                t,
                event: SafetyEventKind::Aborted {
                    status: status.as_str().into(),
                    message: message.unwrap_or_default().into(),
                },
            }));
            ByeReason::Aborted
        }
    };
    out.send(Message::Bye(Bye { reason }));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast(scale: f64) -> SessionConfig {
        let mut c = SessionConfig::new(Scenario::standard(), PerceptionMode::Direct, 4);
        c.time_scale = scale;
        c
    }

    #[test]
    fn commands_wait_for_the_next_tick() {
        let (ev, mut ev_rx) = broadcast::channel(1024);
        let (done_tx, done_rx) = oneshot::channel();
        let h = start_session(fast(20.0), ev, done_tx);
        let mut cmd = OperatorCommand::zero(0.0);
        cmd.v_cmd = 0.1;
        thread::sleep(Duration::from_millis(20));
        let at = h.clock.now();
        h.commands
            .blocking_send(Inbound::Command {
                seq: 1,
                received_at: at,
                command: cmd,
            })
            .unwrap();
        thread::sleep(Duration::from_millis(20));
        h.commands
            .blocking_send(Inbound::Disconnect { at: h.clock.now() })
            .unwrap();
        let outcome = done_rx.blocking_recv().unwrap();
        let rec = &outcome.record;
        assert_eq!(rec.status, SessionStatus::Interrupted);
        assert_eq!(rec.commands.len(), 2);
        let c = rec.commands[0];
        let period = 0.01;
        assert!(c.applied_tick as f64 * period > at, "{c:?}");
        assert_eq!(rec.commands[1].origin, CommandOrigin::SafetyStop);

        // Offline re-simulation of the record reproduces the live log.
        let log = rec.resimulate(&Scenario::standard()).unwrap();
        assert_eq!(log, outcome.log);

        let mut last = None;
        while let Ok(m) = ev_rx.try_recv() {
            last = Some(m);
        }
        assert_eq!(
            last,
            Some(Message::Bye(Bye {
                reason: ByeReason::Interrupted
            }))
        );
    }
}
