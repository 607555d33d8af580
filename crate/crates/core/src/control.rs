//! Extraction phase machine, belt/base speed synchronization and the scripted
//! operator models used for batch trials.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{OperatorConfig, PerceptionMode, Scenario, SyncConfig, VehicleConfig};
use crate::geometry::{normalize_angle, Pose2D};
use crate::sim::WorldState;
use crate::snapshot::StateSnapshot;
use crate::vehicle::StrapState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("premature contact at t={t:.3} s during pose adjustment")]
    PrematureContact { t: f64 },
}

/// Phases of the casualty-extraction procedure, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseId {
    PoseAdjustment,
    Approaching,
    Loading,
    Fastening,
    Done,
}

impl PhaseId {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseId::PoseAdjustment => "pose_adjustment",
            PhaseId::Approaching => "approaching",
            PhaseId::Loading => "loading",
            PhaseId::Fastening => "fastening",
            PhaseId::Done => "done",
        }
    }
}

/// Offset of the robot from the casualty axis.
///
/// `lateral` is the perpendicular distance between the robot's loading axis
/// and the head crown (positive when the robot sits to the left of it);
/// `angular` is the normalized heading difference robot − casualty.
pub fn alignment_error(robot_pose: &Pose2D, casualty_axis: &Pose2D) -> (f64, f64) {
    let (_, head_lateral) = robot_pose.to_local(casualty_axis.x, casualty_axis.y);
    (
        -head_lateral,
        normalize_angle(robot_pose.theta - casualty_axis.theta),
    )
}

/// Advances the phase machine by at most one phase.
pub fn phase_update(
    phase: PhaseId,
    world: &WorldState,
    scenario: &Scenario,
) -> Result<PhaseId, ControlError> {
    use PhaseId::*;
    Ok(match phase {
        PoseAdjustment => {
            if let Some(c) = world.contact {
                return Err(ControlError::PrematureContact { t: c.t_contact });
            }
            let (lat, ang) = alignment_error(&world.robot.pose, &world.casualty_axis(scenario));
            let tol = &scenario.control.alignment;
            if lat.abs() <= tol.lateral && ang.abs() <= tol.angular {
                Approaching
            } else {
                PoseAdjustment
            }
        }
        Approaching if world.contact.is_some() => Loading,
        Loading if world.casualty.onboard_fraction >= 1.0 => Fastening,
        Fastening if world.robot.strap == StrapState::Fastened => Done,
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetpointSource {
    BaseSpeedMeasured,
}

/// PI belt speed controller with a base-speed feedforward.
///
/// The setpoint is the negated measured base speed, so a zero error means the
/// belt surface is at rest in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncControllerState {
    pub kp: f64,
    pub ki: f64,
    /// Duty per m/s of setpoint, the inverse of the belt motor gain.
    pub feedforward: f64,
    pub integral: f64,
    pub integral_limit: f64,
    pub setpoint_source: SetpointSource,
    pub last_error: f64,
}

impl SyncControllerState {
    pub fn new(cfg: &SyncConfig, vehicle: &VehicleConfig) -> Self {
        Self {
            kp: cfg.kp,
            ki: cfg.ki,
            feedforward: 1.0 / vehicle.belt.gain,
            integral: 0.0,
            integral_limit: cfg.integral_limit,
            setpoint_source: SetpointSource::BaseSpeedMeasured,
            last_error: 0.0,
        }
    }
}

pub fn sync_control(
    ctl: &SyncControllerState,
    v_base_meas: f64,
    v_belt_meas: f64,
    dt: f64,
) -> (SyncControllerState, f64) {
    let setpoint = -v_base_meas;
    let e = setpoint - v_belt_meas;
    let ff = ctl.feedforward * setpoint;
    let candidate = (ctl.integral + e * dt).clamp(-ctl.integral_limit, ctl.integral_limit);
    let raw = ff + ctl.kp * e + ctl.ki * candidate;
    // Conditional integration: freeze the integral while saturated in the
    // direction the error pushes.
    let integral = if raw.abs() > 1.0 && raw.signum() == e.signum() {
        ctl.integral
    } else {
        candidate
    };
    let duty = (ff + ctl.kp * e + ctl.ki * integral).clamp(-1.0, 1.0);
    (
        SyncControllerState {
            integral,
            last_error: e,
            ..*ctl
        },
        duty,
    )
}

/// Speed estimate from the last `n` encoder windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSpeed {
    counts: VecDeque<i64>,
    capacity: usize,
}

impl WindowedSpeed {
    pub fn new(periods: usize) -> Self {
        Self {
            counts: VecDeque::with_capacity(periods),
            capacity: periods.max(1),
        }
    }

    pub fn push(&mut self, delta: i64, count_length: f64, period: f64) -> f64 {
        if self.counts.len() == self.capacity {
            self.counts.pop_front();
        }
        self.counts.push_back(delta);
        let total: i64 = self.counts.iter().sum();
        total as f64 * count_length / (self.counts.len() as f64 * period)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorCommand {
    pub v_cmd: f64,
    pub omega_cmd: f64,
    pub belt_enable: bool,
    pub strap_trigger: bool,
    pub stamp: f64,
}

impl OperatorCommand {
    pub fn zero(stamp: f64) -> Self {
        Self {
            v_cmd: 0.0,
            omega_cmd: 0.0,
            belt_enable: false,
            strap_trigger: false,
            stamp,
        }
    }

    pub fn clamped(mut self, vehicle: &VehicleConfig) -> Self {
        let finite = |x: f64| if x.is_finite() { x } else { 0.0 };
        self.v_cmd = finite(self.v_cmd).clamp(-vehicle.v_base_max, vehicle.v_base_max);
        self.omega_cmd = finite(self.omega_cmd).clamp(-vehicle.omega_max, vehicle.omega_max);
        self
    }
}

/// Synthetic stand-in for a human operator in one perception mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedOperator {
    pub mode: PerceptionMode,
    pub reaction_delay: f64,
    pub command_noise_std: f64,
    pub align_speed: f64,
    pub approach_speed: f64,
    pub loading_speed: f64,
    pub lookahead: f64,
    pub alignment_tolerance: (f64, f64),
    strap_sent: bool,
    /// Casualty axis in the robot frame as last seen, and when.
    sighting: Option<(Pose2D, f64)>,
}

impl ScriptedOperator {
    pub fn new(mode: PerceptionMode, cfg: &OperatorConfig, scenario: &Scenario) -> Self {
        let profile = cfg.table.profile(mode);
        Self {
            mode,
            reaction_delay: profile.reaction_delay,
            command_noise_std: profile.command_noise_std,
            align_speed: cfg.align_speed,
            approach_speed: cfg.approach_speed,
            loading_speed: cfg.loading_speed,
            lookahead: cfg.lookahead,
            alignment_tolerance: (
                scenario.control.alignment.lateral,
                scenario.control.alignment.angular,
            ),
            strap_sent: false,
            sighting: None,
        }
    }

    /// Same operator with noise and delay removed.
    pub fn ideal(mut self) -> Self {
        self.reaction_delay = 0.0;
        self.command_noise_std = 0.0;
        self
    }

    /// Where the operator believes the casualty axis is, in the robot frame:
    /// the current view if there is one, else the last sighting carried
    /// forward by the robot's own motion.
    fn believed_axis(&mut self, snapshot: &StateSnapshot) -> Option<Pose2D> {
        if let Some(c) = snapshot.casualty {
            let axis = c.axis_in_robot_frame();
            self.sighting = Some((axis, snapshot.time));
            return Some(axis);
        }
        let (axis, seen_at) = self.sighting?;
        let dt = snapshot.time - seen_at;
        let turn = snapshot.robot.omega * dt;
        let dist = snapshot.robot.v_base * dt;
        let (mx, my) = (dist * (turn / 2.0).cos(), dist * (turn / 2.0).sin());
        let moved = Pose2D::new(mx, my, turn);
        let (x, y) = moved.to_local(axis.x, axis.y);
        let axis = Pose2D::new(x, y, axis.theta - turn);
        self.sighting = Some((axis, snapshot.time));
        Some(axis)
    }

    fn steering(&mut self, snapshot: &StateSnapshot, speed: f64) -> f64 {
        let Some(axis) = self.believed_axis(snapshot) else {
            return 0.0;
        };
        // Robot position expressed in the casualty frame.
        let (_, offset) = axis.to_local(0.0, 0.0);
        // Pure pursuit of the axis point `lookahead` ahead of the robot.
        let alpha = normalize_angle((-offset).atan2(self.lookahead) + axis.theta);
        2.0 * speed * alpha.sin() / self.lookahead
    }
}

/// One command from the scripted operator, given the (already delayed)
/// snapshot it perceives.
pub fn operator_policy<R: Rng + ?Sized>(
    op: &mut ScriptedOperator,
    snapshot: &StateSnapshot,
    rng: &mut R,
) -> OperatorCommand {
    let noise = |rng: &mut R, std: f64| -> f64 {
        if std > 0.0 {
            Normal::new(0.0, std).expect("finite std").sample(rng)
        } else {
            0.0
        }
    };
    let mut cmd = OperatorCommand::zero(snapshot.time);
    let speed = match snapshot.phase {
        PhaseId::PoseAdjustment => op.align_speed,
        PhaseId::Approaching => op.approach_speed,
        _ => 0.0,
    };
    let omega = op.steering(snapshot, speed);
    match snapshot.phase {
        PhaseId::PoseAdjustment => {
            cmd.v_cmd = op.align_speed;
            cmd.omega_cmd = omega;
        }
        PhaseId::Approaching => {
            cmd.v_cmd = op.approach_speed;
            cmd.omega_cmd = omega;
            cmd.belt_enable = true;
        }
        PhaseId::Loading => {
            cmd.v_cmd = op.loading_speed;
            cmd.belt_enable = true;
        }
        PhaseId::Fastening => {
            cmd.belt_enable = true;
            if !op.strap_sent {
                cmd.strap_trigger = true;
                op.strap_sent = true;
            }
        }
        PhaseId::Done => {}
    }
    if cmd.v_cmd != 0.0 {
        cmd.v_cmd += noise(rng, op.command_noise_std);
    }
    cmd
}
