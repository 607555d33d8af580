//! Operator-facing state snapshots and perception-mode visibility gating.
//!
//! A snapshot is built with everything visible and then narrowed by
//! [`apply_visibility`]. Hidden fields are removed (`None`), never zeroed, and
//! their names are listed in `hidden`.

use serde::{Deserialize, Serialize};

use crate::config::{PerceptionMode, Scenario};
use crate::control::PhaseId;
use crate::geometry::{normalize_angle, Pose2D};
use crate::sim::WorldState;
use crate::vehicle::StrapState;

/// Robot-frame quantities, always visible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotView {
    pub v_base: f64,
    pub omega: f64,
    pub v_belt: f64,
    pub strap: StrapState,
}

/// World-frame casualty layout (god view only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CasualtyWorld {
    pub axis: Pose2D,
    pub head_pos: f64,
    pub upper_pos: f64,
    pub lower_pos: f64,
}

/// Casualty as seen from the robot's camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CasualtyView {
    /// Distance from the robot reference point to the head crown, m.
    pub range: f64,
    /// Bearing of the crown in the robot frame, rad (left positive).
    pub bearing: f64,
    /// Heading of the body axis relative to the robot heading, rad.
    pub relative_heading: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<CasualtyWorld>,
}

impl CasualtyView {
    /// Crown position and body axis expressed in the robot frame.
    pub fn axis_in_robot_frame(&self) -> Pose2D {
        Pose2D::new(
            self.range * self.bearing.cos(),
            self.range * self.bearing.sin(),
            self.relative_heading,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Telemetry {
    /// Latest |a| from the head IMU, m/s².
    pub acc_now: f64,
    /// Running maximum |a| since first contact, m/s².
    pub a_max: f64,
    /// Force estimate from the running maximum, N.
    pub f_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub time: f64,
    pub phase: PhaseId,
    pub robot: RobotView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_pose: Option<Pose2D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub casualty: Option<CasualtyView>,
    pub onboard_fraction: f64,
    pub telemetry: Telemetry,
    pub contact: bool,
    #[serde(default)]
    pub hidden: Vec<String>,
}

impl StateSnapshot {
    /// Full (god-view) snapshot of `world`.
    pub fn from_world(world: &WorldState, scenario: &Scenario, telemetry: Telemetry) -> Self {
        let r = &world.robot;
        let (hx, hy) = world.head_point(scenario);
        let (fx, fy) = r.pose.to_local(hx, hy);
        let axis_theta = scenario.casualty.axis.theta;
        let c = &world.casualty;
        StateSnapshot {
            time: world.time,
            phase: world.phase,
            robot: RobotView {
                v_base: r.v_base,
                omega: r.omega,
                v_belt: r.v_belt,
                strap: r.strap,
            },
            robot_pose: Some(r.pose),
            casualty: Some(CasualtyView {
                range: fx.hypot(fy),
                bearing: fy.atan2(fx),
                relative_heading: normalize_angle(axis_theta - r.pose.theta),
                depth: Some(fx),
                world: Some(CasualtyWorld {
                    axis: scenario.casualty.axis,
                    head_pos: c.head_pos,
                    upper_pos: c.upper_pos,
                    lower_pos: c.lower_pos,
                }),
            }),
            onboard_fraction: c.onboard_fraction,
            telemetry,
            contact: world.contact.is_some(),
            hidden: Vec::new(),
        }
    }

    /// Names of the entities present in this snapshot.
    pub fn visible_entities(&self) -> Vec<&'static str> {
        let mut out = vec!["robot"];
        if self.robot_pose.is_some() {
            out.push("robot_pose");
        }
        if let Some(c) = &self.casualty {
            out.push("casualty");
            if c.depth.is_some() {
                out.push("casualty.depth");
            }
            if c.world.is_some() {
                out.push("casualty.world");
            }
        }
        out
    }
}

/// Camera cones for the two remote perception modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityConfig {
    /// Full field of view of the monocular camera, rad.
    pub conventional_fov: f64,
    /// Full field of view of the stereo headset, rad.
    pub immersive_fov: f64,
    /// Maximum range at which the casualty is seen, m.
    pub max_range: f64,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            conventional_fov: 60f64.to_radians(),
            immersive_fov: 110f64.to_radians(),
            max_range: 6.0,
        }
    }
}

pub fn in_cone(bearing: f64, range: f64, fov: f64, max_range: f64) -> bool {
    bearing.abs() <= fov / 2.0 && range <= max_range
}

/// Narrows a full snapshot to what the operator sees in `mode`.
pub fn apply_visibility(
    snapshot: &StateSnapshot,
    mode: PerceptionMode,
    cfg: &VisibilityConfig,
) -> StateSnapshot {
    let mut out = snapshot.clone();
    if mode == PerceptionMode::Direct {
        return out;
    }
    let fov = match mode {
        PerceptionMode::Conventional => cfg.conventional_fov,
        _ => cfg.immersive_fov,
    };
    let mut hidden = Vec::new();
    if out.robot_pose.take().is_some() {
        hidden.push("robot_pose".to_string());
    }
    out.casualty = match snapshot.casualty {
        Some(c) if in_cone(c.bearing, c.range, fov, cfg.max_range) => {
            let mut c = c;
            if c.world.take().is_some() {
                hidden.push("casualty.world".to_string());
            }
            if mode == PerceptionMode::Conventional && c.depth.take().is_some() {
                hidden.push("casualty.depth".to_string());
            }
            Some(c)
        }
        Some(_) => {
            hidden.push("casualty".to_string());
            None
        }
        None => None,
    };
    out.hidden = hidden;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn snapshot_with_casualty_at(bearing_deg: f64) -> StateSnapshot {
        let s = Scenario::standard();
        let mut w = WorldState::initial(&s, 0);
        // Robot 2 m from the crown, crown at the requested bearing.
        let b = bearing_deg.to_radians();
        w.robot.pose = Pose2D::new(-2.0 * b.cos(), -2.0 * b.sin(), 0.0);
        StateSnapshot::from_world(&w, &s, Telemetry::default())
    }

    #[test]
    fn direct_shows_everything() {
        let snap = snapshot_with_casualty_at(40.0);
        let d = apply_visibility(&snap, PerceptionMode::Direct, &VisibilityConfig::default());
        assert!(d.hidden.is_empty());
        assert_eq!(d, snap);
    }

    #[test]
    fn conventional_hides_casualty_outside_cone() {
        let snap = snapshot_with_casualty_at(40.0);
        let c = snap.casualty.unwrap();
        assert!((c.bearing.to_degrees() - 40.0).abs() < 1e-9);
        let v = apply_visibility(&snap, PerceptionMode::Conventional, &VisibilityConfig::default());
        assert!(v.casualty.is_none());
        assert!(v.robot_pose.is_none());
        let json = serde_json::to_string(&v).unwrap();
        assert!(!json.contains("\"casualty\":{"));
        assert!(!json.contains("robot_pose\":{"));
    }

    #[test]
    fn immersive_shows_casualty_with_depth() {
        let snap = snapshot_with_casualty_at(40.0);
        let v = apply_visibility(&snap, PerceptionMode::Immersive, &VisibilityConfig::default());
        let c = v.casualty.expect("inside the 55 degree half-angle");
        assert!((c.depth.unwrap() - 2.0 * 40f64.to_radians().cos()).abs() < 1e-9);
        assert!(c.world.is_none());
    }

    #[test]
    fn snapshot_is_small() {
        let snap = snapshot_with_casualty_at(10.0);
        assert!(serde_json::to_vec(&snap).unwrap().len() < 4096);
    }

    proptest! {
        #[test]
        fn visibility_is_nested(x in -5.0f64..3.0, y in -3.0f64..3.0, th in -3.2f64..3.2) {
            let s = Scenario::standard();
            let mut w = WorldState::initial(&s, 0);
            w.robot.pose = Pose2D::new(x, y, th);
            let snap = StateSnapshot::from_world(&w, &s, Telemetry::default());
            let cfg = VisibilityConfig::default();
            let conv = apply_visibility(&snap, PerceptionMode::Conventional, &cfg).visible_entities();
            let imm = apply_visibility(&snap, PerceptionMode::Immersive, &cfg).visible_entities();
            let dir = apply_visibility(&snap, PerceptionMode::Direct, &cfg).visible_entities();
            prop_assert!(conv.iter().all(|e| imm.contains(e)));
            prop_assert!(imm.iter().all(|e| dir.contains(e)));
        }
    }
}
