//! Generators for protocol messages, shared with the acceptance gate.

use proptest::prelude::*;

use resqsim_core::control::PhaseId;
use resqsim_core::safety::Verdict;
use resqsim_core::snapshot::{apply_visibility, Telemetry, VisibilityConfig};
use resqsim_core::vehicle::StrapState;
use resqsim_core::{OperatorCommand, PerceptionMode, Pose2D, SafetyReport, Scenario, StateSnapshot, WorldState};
use resqsim_teleop::protocol::{
    Bye, ByeReason, CommandFrame, ErrorCode, ErrorFrame, Hello, Message, PhaseEvent, SafetyEvent,
    SafetyEventKind, SessionInfo, SnapshotFrame,
};

const PHASES: [PhaseId; 5] = [
    PhaseId::PoseAdjustment,
    PhaseId::Approaching,
    PhaseId::Loading,
    PhaseId::Fastening,
    PhaseId::Done,
];

pub fn mode() -> impl Strategy<Value = PerceptionMode> {
    prop::sample::select(PerceptionMode::ALL.to_vec())
}

pub fn phase() -> impl Strategy<Value = PhaseId> {
    prop::sample::select(PHASES.to_vec())
}

pub fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(1e-300),
        Just(f64::MAX),
    ]
}

pub fn text() -> impl Strategy<Value = String> {
    "[ -~\u{e9}\u{3bc}\u{1f691}\"\\\\\n]{0,40}"
}

/// Snapshots of plausible worlds, passed through each mode's mask.
pub fn snapshot() -> impl Strategy<Value = StateSnapshot> {
    (
        (-6.0f64..6.0, -3.0f64..3.0, -3.2f64..3.2),
        (-0.3f64..0.3, -0.6f64..0.6, -0.3f64..0.3),
        (0.0f64..1.0, 0.0f64..200.0, phase(), any::<bool>()),
        (0.0f64..300.0, mode()),
    )
        .prop_map(|((x, y, th), (v, w, vb), (frac, a, ph, strap), (t, m))| {
            let s = Scenario::standard();
            let mut world = WorldState::initial(&s, 0);
            world.robot.pose = Pose2D::new(x, y, th);
            world.robot.v_base = v;
            world.robot.omega = w;
            world.robot.v_belt = vb;
            world.robot.strap = if strap {
                StrapState::Fastening { elapsed: t / 100.0 }
            } else {
                StrapState::Open
            };
            world.casualty.onboard_fraction = frac;
            world.phase = ph;
            world.time = t;
            let tel = Telemetry {
                acc_now: a / 2.0,
                a_max: a,
                f_max: 22.9 + 4.5 * a,
            };
            apply_visibility(&StateSnapshot::from_world(&world, &s, tel), m, &VisibilityConfig::default())
        })
}

pub fn command() -> impl Strategy<Value = OperatorCommand> {
    (finite(), finite(), any::<bool>(), any::<bool>(), finite()).prop_map(|(v, w, b, s, t)| {
        OperatorCommand {
            v_cmd: v,
            omega_cmd: w,
            belt_enable: b,
            strap_trigger: s,
            stamp: t,
        }
    })
}

pub fn report() -> impl Strategy<Value = SafetyReport> {
    (finite(), finite(), finite(), finite(), finite(), prop::collection::vec((text(), finite(), finite(), any::<bool>()), 0..4))
        .prop_map(|(a, v, x, f, t, vs)| {
            SafetyReport {
                a_max: a,
                v_max_contact: v,
                head_displacement: x,
                f_max: f,
                t_contact: t,
                verdicts: vs
                    .into_iter()
                    .map(|(name, value, limit, pass)| Verdict {
                        name,
                        value,
                        limit,
                        pass,
                    })
                    .collect(),
            }
        })
}

pub fn error_code() -> impl Strategy<Value = ErrorCode> {
    prop::sample::select(vec![
        ErrorCode::Malformed,
        ErrorCode::UnknownType,
        ErrorCode::Unexpected,
        ErrorCode::UnsupportedVersion,
        ErrorCode::ModeMismatch,
        ErrorCode::ScenarioMismatch,
        ErrorCode::Busy,
        ErrorCode::Overflow,
        ErrorCode::Internal,
    ])
}

pub fn message() -> impl Strategy<Value = Message> {
    let session = (text(), text(), any::<u64>(), finite(), finite(), finite()).prop_map(
        |(id, config_hash, seed, c, s, k)| SessionInfo {
            id,
            config_hash,
            seed,
            control_rate_hz: c,
            snapshot_rate_hz: s,
            time_scale: k,
        },
    );
    prop_oneof![
        (any::<u32>(), mode(), prop::option::of(text()), prop::option::of(session)).prop_map(
            |(version, mode, scenario, session)| Message::Hello(Hello {
                version,
                mode,
                scenario,
                session,
            })
        ),
        (any::<u64>(), any::<u64>(), snapshot())
            .prop_map(|(seq, tick, snapshot)| Message::Snapshot(SnapshotFrame { seq, tick, snapshot })),
        (any::<u64>(), command()).prop_map(|(seq, command)| Message::Command(CommandFrame { seq, command })),
        (any::<u64>(), finite(), phase(), phase())
            .prop_map(|(tick, t, from, to)| Message::PhaseEvent(PhaseEvent { tick, t, from, to })),
        (
            any::<u64>(),
            finite(),
            prop_oneof![
                finite().prop_map(|relative_speed| SafetyEventKind::Contact { relative_speed }),
                report().prop_map(|report| SafetyEventKind::Report { report }),
                text().prop_map(|message| SafetyEventKind::Warning { message }),
                (text(), text()).prop_map(|(status, message)| SafetyEventKind::Aborted { status, message }),
            ]
        )
            .prop_map(|(tick, t, event)| Message::SafetyEvent(SafetyEvent { tick, t, event })),
        (error_code(), text(), prop::option::of(prop::collection::vec(any::<u32>(), 0..4))).prop_map(
            |(code, message, supported_versions)| Message::Error(ErrorFrame {
                code,
                message,
                supported_versions,
            })
        ),
        prop::sample::select(vec![
            ByeReason::ClientDone,
            ByeReason::Completed,
            ByeReason::Interrupted,
            ByeReason::Aborted,
            ByeReason::ProtocolFaults,
            ByeReason::Shutdown,
            ByeReason::EndOfLog,
        ])
        .prop_map(|reason| Message::Bye(Bye { reason })),
    ]
}
