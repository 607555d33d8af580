//! Turns a recorded trial log back into the message stream a live session
//! would have sent.

use std::time::Duration;

use resqsim_core::harness::{replay, TickRecord, TrialLog};
use resqsim_core::safety::estimate_force;
use resqsim_core::snapshot::{apply_visibility, Telemetry, VisibilityConfig};
use resqsim_core::{PerceptionMode, Scenario, StateSnapshot};

use crate::protocol::{Message, PhaseEvent, SafetyEvent, SafetyEventKind, SnapshotFrame};

/// Messages for `log` at `speed`×, each with its wall-clock offset from the
/// start of playback. Snapshots are thinned to `snapshot_rate_hz`.
pub fn frames(
    log: &TrialLog,
    scenario: &Scenario,
    mode: PerceptionMode,
    vis: &VisibilityConfig,
    speed: f64,
    snapshot_rate_hz: f64,
) -> Vec<(Duration, Message)> {
    let rate = log.header.control_rate_hz;
    let slot = |k: u64| (k as f64 * snapshot_rate_hz / rate).floor() as u64;
    let est = &scenario.safety.estimator;
    let mut telemetry = Telemetry::default();
    let mut out = Vec::new();
    let mut seq = 0;
    let mut prev: Option<&TickRecord> = None;
    for (offset, rec) in replay::schedule(log, speed) {
        if let Some(sample) = log.imu.get(rec.tick as usize) {
            telemetry.acc_now = sample.a.abs();
            if rec.world.contact.is_some() {
                telemetry.a_max = telemetry.a_max.max(sample.a.abs());
                telemetry.f_max =
                    estimate_force(telemetry.a_max, est.m_head, est.f_static).unwrap_or(0.0);
            }
        }
        if let Some(p) = prev {
            if p.phase != rec.phase {
                out.push((
                    offset,
                    Message::PhaseEvent(PhaseEvent {
                        tick: rec.tick,
                        t: rec.t,
                        from: p.phase,
                        to: rec.phase,
                    }),
                ));
            }
            if p.world.contact.is_none() {
                if let Some(c) = rec.world.contact {
                    out.push((
                        offset,
                        Message::SafetyEvent(SafetyEvent {
                            tick: rec.tick,
                            t: rec.t,
                            event: SafetyEventKind::Contact {
                                relative_speed: c.relative_speed,
                            },
                        }),
                    ));
                }
            }
        }
        if prev.is_none() || prev.is_some_and(|p| slot(p.tick) != slot(rec.tick)) {
            seq += 1;
            let full = StateSnapshot::from_world(&rec.world, scenario, telemetry);
            out.push((
                offset,
                Message::Snapshot(SnapshotFrame {
                    seq,
                    tick: rec.tick,
                    snapshot: apply_visibility(&full, mode, vis),
                }),
            ));
        }
        prev = Some(rec);
    }
    out
}
