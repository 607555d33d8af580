mod support;

use proptest::prelude::*;

use resqsim_core::snapshot::{apply_visibility, Telemetry, VisibilityConfig};
use resqsim_core::{PerceptionMode, Pose2D, Scenario, StateSnapshot, WorldState};
use resqsim_teleop::protocol::{
    check_hello, decode, encode, Hello, Message, ProtocolError, SnapshotFrame, PROTOCOL_VERSION,
};

use support::strategies::{message, snapshot};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn decode_inverts_encode(m in message()) {
        let text = encode(&m);
        prop_assert_eq!(decode(&text), Ok(m));
    }

    #[test]
    fn snapshots_stay_under_four_kib(m in snapshot(), seq in any::<u64>(), tick in any::<u64>()) {
        let text = encode(&Message::Snapshot(SnapshotFrame { seq, tick, snapshot: m }));
        prop_assert!(text.len() < 4096, "{} bytes", text.len());
    }

    #[test]
    fn every_strict_prefix_is_rejected(m in message(), cut in 0.0f64..1.0) {
        let text = encode(&m);
        let mut n = ((text.len() as f64) * cut) as usize;
        while !text.is_char_boundary(n) {
            n -= 1;
        }
        prop_assert!(matches!(decode(&text[..n]), Err(ProtocolError::Malformed(_))));
    }

    #[test]
    fn unknown_types_are_named(name in "[a-z_]{1,12}") {
        let known = ["hello", "snapshot", "command", "phase_event", "safety_event", "error", "bye"];
        prop_assume!(!known.contains(&name.as_str()));
        let frame = format!(r#"{{"type":"{name}","seq":1}}"#);
        prop_assert_eq!(decode(&frame), Err(ProtocolError::UnknownType(name)));
    }
}

#[test]
fn masked_fields_are_absent_not_zeroed() {
    let s = Scenario::standard();
    let mut world = WorldState::initial(&s, 0);
    // Casualty well behind the robot: outside both camera cones.
    world.robot.pose = Pose2D::new(s.casualty.axis.x + 3.0, s.casualty.axis.y, s.casualty.axis.theta);
    let full = StateSnapshot::from_world(&world, &s, Telemetry::default());
    let text = encode(&Message::Snapshot(SnapshotFrame {
        seq: 1,
        tick: 0,
        snapshot: apply_visibility(&full, PerceptionMode::Conventional, &VisibilityConfig::default()),
    }));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let snap = &v["snapshot"];
    assert!(snap.get("casualty").is_none(), "{snap}");
    assert!(snap.get("robot_pose").is_none(), "{snap}");
    assert!(!snap["hidden"].as_array().unwrap().is_empty());

    let direct = encode(&Message::Snapshot(SnapshotFrame {
        seq: 1,
        tick: 0,
        snapshot: apply_visibility(&full, PerceptionMode::Direct, &VisibilityConfig::default()),
    }));
    let v: serde_json::Value = serde_json::from_str(&direct).unwrap();
    assert!(v["snapshot"].get("casualty").is_some());
    assert!(v["snapshot"]["hidden"].as_array().unwrap().is_empty());
}

#[test]
fn handshake_rejections_carry_codes() {
    let h = Hello {
        version: PROTOCOL_VERSION + 1,
        mode: PerceptionMode::Direct,
        scenario: None,
        session: None,
    };
    let e = check_hello(&h, PerceptionMode::Direct, "standard").unwrap_err();
    let text = encode(&Message::Error(e));
    assert_eq!(
        text,
        format!(
            r#"{{"type":"error","code":"unsupported_version","message":"protocol version {} is not supported","supported_versions":[{}]}}"#,
            PROTOCOL_VERSION + 1,
            PROTOCOL_VERSION
        )
    );
}
