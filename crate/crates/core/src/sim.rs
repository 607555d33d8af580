//! Fixed-step planar physics of the robot and the casualty.
//!
//! The robot moves in the plane (unicycle kinematics). The casualty lies along
//! a straight loading axis (`CasualtyConfig::axis`: crown position, direction
//! crown→feet) and only moves along it. Axis coordinates are metres from the
//! axis origin. The robot's body +x direction points out over the bed, so a
//! positive base speed drives the bed edge towards the casualty and a belt
//! running at `v_belt = -v_base` leaves the belt surface at rest in the world.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Scenario;
use crate::control::PhaseId;
use crate::geometry::{normalize_angle, Pose2D};
use crate::vehicle::{
    belt_motor_step, diff_drive_forward, diff_drive_inverse, strap_step, BeltMotorModel,
    StrapCommand, StrapState, Twist,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step {got} does not match the configured fixed step {expected}")]
    StepMismatch { got: f64, expected: f64 },
    #[error("simulation diverged at t={:.3} s", .last_valid.time)]
    Diverged { last_valid: Box<WorldState> },
    #[error("friction normal load must be non-negative, got {0}")]
    NegativeNormalLoad(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2D,
    pub v_base: f64,
    pub omega: f64,
    pub v_belt: f64,
    pub strap: StrapState,
    pub bed_angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CasualtyState {
    /// Midpoint of the upper body segment, axis coordinate.
    pub upper_pos: f64,
    /// Midpoint of the lower body segment, axis coordinate.
    pub lower_pos: f64,
    /// Crown of the head, axis coordinate.
    pub head_pos: f64,
    pub head_vel: f64,
    pub head_acc: f64,
    pub onboard_fraction: f64,
    pub m_head: f64,
    pub m_upper: f64,
    pub mu_s: f64,
    pub mu_k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub t_contact: f64,
    /// Bed edge speed minus head speed along the axis at contact.
    pub relative_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub tick: u64,
    pub robot: RobotState,
    pub casualty: CasualtyState,
    pub phase: PhaseId,
    pub rng_seed: u64,
    pub contact: Option<ContactEvent>,
}

/// Actuator inputs applied over one physics step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationInput {
    pub v_cmd: f64,
    pub omega_cmd: f64,
    pub belt_duty: f64,
    pub strap: StrapCommand,
    /// Forces exact belt/base synchronization instead of driving the motor.
    pub exact_sync: bool,
}

impl ActuationInput {
    pub fn idle() -> Self {
        Self {
            v_cmd: 0.0,
            omega_cmd: 0.0,
            belt_duty: 0.0,
            strap: StrapCommand::Hold,
            exact_sync: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub world: WorldState,
    /// Set on the step where the bed edge first reaches the head.
    pub contact: Option<ContactEvent>,
    pub warnings: Vec<String>,
}

/// Geometry of the bed edge relative to the casualty axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGeometry {
    /// Axis coordinate of the bed leading edge.
    pub along: f64,
    /// Signed perpendicular distance of the edge from the axis.
    pub lateral: f64,
    /// cos of the heading difference between robot and axis.
    pub alignment: f64,
}

pub fn edge_geometry(robot: &RobotState, scenario: &Scenario) -> EdgeGeometry {
    let axis = scenario.casualty.axis;
    let (ex, ey) = robot.pose.ahead(scenario.vehicle.bed_reach);
    let (along, lateral) = axis.to_local(ex, ey);
    EdgeGeometry {
        along,
        lateral,
        alignment: (robot.pose.theta - axis.theta).cos(),
    }
}

impl WorldState {
    pub fn initial(scenario: &Scenario, rng_seed: u64) -> Self {
        let c = &scenario.casualty;
        let robot = RobotState {
            pose: scenario.robot.initial_pose,
            v_base: 0.0,
            omega: 0.0,
            v_belt: 0.0,
            strap: StrapState::Open,
            bed_angle: scenario.vehicle.bed_angle,
        };
        let mut casualty = CasualtyState {
            upper_pos: 0.0,
            lower_pos: 0.0,
            head_pos: 0.0,
            head_vel: 0.0,
            head_acc: 0.0,
            onboard_fraction: 0.0,
            m_head: c.m_head,
            m_upper: c.m_upper,
            mu_s: c.mu_s,
            mu_k: c.mu_k,
        };
        place_segments(&mut casualty, scenario);
        let edge = edge_geometry(&robot, scenario);
        casualty.onboard_fraction = onboard_fraction(edge.along, casualty.head_pos, c.upper_length);
        WorldState {
            time: 0.0,
            tick: 0,
            robot,
            casualty,
            phase: PhaseId::PoseAdjustment,
            rng_seed,
            contact: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        let r = &self.robot;
        let c = &self.casualty;
        [
            self.time,
            r.pose.x,
            r.pose.y,
            r.pose.theta,
            r.v_base,
            r.omega,
            r.v_belt,
            c.head_pos,
            c.head_vel,
            c.head_acc,
            c.upper_pos,
            c.lower_pos,
            c.onboard_fraction,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Head crown in world coordinates.
    pub fn head_point(&self, scenario: &Scenario) -> (f64, f64) {
        scenario.casualty.axis.ahead(self.casualty.head_pos)
    }

    /// Casualty axis pose translated to the current head crown.
    pub fn casualty_axis(&self, scenario: &Scenario) -> Pose2D {
        let (x, y) = self.head_point(scenario);
        Pose2D::new(x, y, scenario.casualty.axis.theta)
    }

    /// Kinetic energy of robot base, belt-borne head and casualty.
    pub fn kinetic_energy(&self, scenario: &Scenario) -> f64 {
        let r = &self.robot;
        let c = &self.casualty;
        0.5 * scenario.robot.mass * r.v_base * r.v_base + 0.5 * c.m_head * c.head_vel * c.head_vel
    }

    /// Kinetic energy plus the elastic energy stored in the neck.
    pub fn mechanical_energy(&self, scenario: &Scenario) -> f64 {
        let stretch = self.casualty.head_pos - self.body_crown(scenario);
        self.kinetic_energy(scenario) + 0.5 * scenario.casualty.neck_stiffness * stretch * stretch
    }

    /// Axis coordinate of the crown with the neck relaxed.
    pub fn body_crown(&self, scenario: &Scenario) -> f64 {
        self.casualty.upper_pos - scenario.casualty.upper_length / 2.0
    }
}

fn place_segments(c: &mut CasualtyState, scenario: &Scenario) {
    let cfg = &scenario.casualty;
    c.upper_pos = c.head_pos + cfg.upper_length / 2.0;
    c.lower_pos = c.head_pos + cfg.upper_length + cfg.lower_length / 2.0;
}

/// Fraction of the upper body (crown to hip) lying on the bed.
pub fn onboard_fraction(edge_along: f64, crown: f64, upper_length: f64) -> f64 {
    ((edge_along - crown) / upper_length).clamp(0.0, 1.0)
}

/// Coulomb friction with a static regime inside the `v_stick` deadband.
///
/// Returns the friction force opposing `applied_force` (static) or the
/// motion (kinetic).
pub fn friction_force(
    normal_load: f64,
    mu_s: f64,
    mu_k: f64,
    applied_force: f64,
    rel_vel: f64,
    v_stick: f64,
) -> Result<f64, SimError> {
    if normal_load < 0.0 {
        return Err(SimError::NegativeNormalLoad(normal_load));
    }
    Ok(coulomb(
        applied_force,
        rel_vel,
        mu_s * normal_load,
        mu_k * normal_load,
        v_stick,
    ))
}

fn coulomb(applied: f64, rel_vel: f64, static_cap: f64, kinetic: f64, v_stick: f64) -> f64 {
    if rel_vel.abs() < v_stick {
        if applied.abs() <= static_cap {
            return -applied;
        }
        return -applied.signum() * kinetic;
    }
    -rel_vel.signum() * kinetic
}

/// Per-step inputs to [`loading_dynamics`] that depend on the robot and the
/// configuration rather than on the casualty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadingContext {
    pub dt: f64,
    pub gravity: f64,
    pub v_stick: f64,
    /// Axis coordinate of the bed edge after this step's robot motion.
    pub edge_along: f64,
    /// World-frame belt surface speed along the axis.
    pub v_surf: f64,
    /// Apply the first-contact impulse on this step.
    pub impulse: bool,
    pub head_length: f64,
    pub upper_length: f64,
    pub mu_belt: f64,
    pub belt_traction: f64,
    pub edge_coupling: f64,
    pub lip_support: f64,
    pub neck_stiffness: f64,
}

impl LoadingContext {
    pub fn new(scenario: &Scenario, edge_along: f64, v_surf: f64, impulse: bool) -> Self {
        let c = &scenario.casualty;
        Self {
            dt: scenario.sim.dt,
            gravity: scenario.sim.gravity,
            v_stick: scenario.sim.v_stick,
            edge_along,
            v_surf,
            impulse,
            head_length: c.head_length,
            upper_length: c.upper_length,
            mu_belt: c.mu_belt,
            belt_traction: c.belt_traction,
            edge_coupling: c.edge_coupling,
            lip_support: c.lip_support,
            neck_stiffness: c.neck_stiffness,
        }
    }
}

/// Longitudinal head dynamics for one step.
///
/// The torso stays where it lies; only the head moves, tied to it by the
/// neck spring. The part of the head resting on the bed (at least
/// `lip_support` once the edge roller touches it) is dragged by the belt
/// surface with a traction linear in slip, saturating at the belt grip
/// limit. The rest lies on the ground with Coulomb friction. On the inclined
/// bed the along-axis gravity component acts as extra resistance to motion.
pub fn loading_dynamics(
    casualty: &CasualtyState,
    robot: &RobotState,
    contact: bool,
    ctx: &LoadingContext,
) -> CasualtyState {
    let mut next = *casualty;
    let v0 = casualty.head_vel;
    let mut v = v0;
    let crown = casualty.upper_pos - ctx.upper_length / 2.0;
    let stretch = casualty.head_pos - crown;

    let support = if contact {
        ((ctx.edge_along - casualty.head_pos) / ctx.head_length).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let carried = if contact {
        support.max(ctx.lip_support)
    } else {
        0.0
    };
    if contact && ctx.impulse {
        v += ctx.edge_coupling * (ctx.v_surf - v);
    }

    let weight = casualty.m_head * ctx.gravity;
    let n_bed = weight * carried * robot.bed_angle.cos();
    let n_ground = weight * (1.0 - support);
    let ramp = weight * support * robot.bed_angle.sin();

    let grip = ctx.mu_belt * n_bed;
    let traction = (ctx.belt_traction * carried * (ctx.v_surf - v)).clamp(-grip, grip);
    let applied = traction - ctx.neck_stiffness * stretch;
    let resist = coulomb(
        applied,
        v,
        casualty.mu_s * n_ground + ramp,
        casualty.mu_k * n_ground + ramp,
        ctx.v_stick,
    );
    let static_cap = casualty.mu_s * n_ground + ramp;
    let mut v_new = v + (applied + resist) / casualty.m_head * ctx.dt;
    // Friction stops the head; it never reverses it.
    if v != 0.0 && v_new * v < 0.0 && applied.abs() <= static_cap {
        v_new = 0.0;
    }
    // Held by static friction inside the deadband: stuck, not creeping.
    if v.abs() < ctx.v_stick && applied.abs() <= static_cap {
        v_new = 0.0;
    }

    next.head_vel = v_new;
    next.head_acc = (v_new - v0) / ctx.dt;
    next.head_pos = casualty.head_pos + v_new * ctx.dt;
    next.onboard_fraction = onboard_fraction(ctx.edge_along, crown, ctx.upper_length);
    next
}

fn approach(current: f64, target: f64, max_delta: f64) -> f64 {
    current + (target - current).clamp(-max_delta, max_delta)
}

/// Advances the world by one fixed step.
pub fn step(
    world: &WorldState,
    actuation: &ActuationInput,
    scenario: &Scenario,
    dt: f64,
) -> Result<StepOutcome, SimError> {
    if (dt - scenario.sim.dt).abs() > 1e-12 {
        return Err(SimError::StepMismatch {
            got: dt,
            expected: scenario.sim.dt,
        });
    }
    let v = &scenario.vehicle;
    let mut warnings = Vec::new();
    let mut next = world.clone();

    // Base: command -> wheel limits -> rate limits -> unicycle.
    let target = Twist {
        v: actuation.v_cmd.clamp(-v.v_base_max, v.v_base_max),
        omega: actuation.omega_cmd.clamp(-v.omega_max, v.omega_max),
    };
    let wheels = diff_drive_inverse(target, v.track_width)
        .expect("validated track width")
        .limited(v.wheel_speed_max);
    let target = diff_drive_forward(wheels, v.track_width).expect("validated track width");
    let r = &mut next.robot;
    r.v_base = approach(r.v_base, target.v, v.base_accel_max * dt).clamp(-v.v_base_max, v.v_base_max);
    r.omega = approach(r.omega, target.omega, v.omega_accel_max * dt);
    let mid_heading = r.pose.theta + 0.5 * r.omega * dt;
    r.pose.x += r.v_base * mid_heading.cos() * dt;
    r.pose.y += r.v_base * mid_heading.sin() * dt;
    r.pose.theta = normalize_angle(r.pose.theta + r.omega * dt);

    // Belt.
    if actuation.exact_sync {
        r.v_belt = (-r.v_base).clamp(-v.v_belt_max(), v.v_belt_max());
    } else {
        let motor = BeltMotorModel::new(&v.belt, r.v_belt);
        let (motor, clamped) = belt_motor_step(&motor, actuation.belt_duty, dt);
        if clamped {
            warnings.push(format!("belt duty {} clamped", actuation.belt_duty));
        }
        r.v_belt = motor.v_belt;
    }

    // Strap.
    let fully_onboard = world.casualty.onboard_fraction >= 1.0;
    match strap_step(r.strap, actuation.strap, dt, v.strap_duration, fully_onboard) {
        Ok(s) => r.strap = s,
        Err(e) => warnings.push(e.to_string()),
    }

    // Contact detection along the loading axis.
    let before = edge_geometry(&world.robot, scenario);
    let after = edge_geometry(&next.robot, scenario);
    let head = world.casualty.head_pos;
    let mut contact_event = None;
    if world.contact.is_none()
        && after.lateral.abs() <= v.bed_half_width
        && before.along < head
        && after.along >= head
    {
        let frac = (head - before.along) / (after.along - before.along);
        let edge_speed = next.robot.v_base * after.alignment;
        let ev = ContactEvent {
            t_contact: world.time + frac * dt,
            relative_speed: edge_speed - world.casualty.head_vel,
        };
        next.contact = Some(ev);
        contact_event = Some(ev);
    }

    let v_surf = (next.robot.v_base + next.robot.v_belt) * after.alignment;
    let ctx = LoadingContext::new(scenario, after.along, v_surf, contact_event.is_some());
    next.casualty = loading_dynamics(&world.casualty, &next.robot, next.contact.is_some(), &ctx);

    next.tick = world.tick + 1;
    next.time = next.tick as f64 * dt;

    if !next.is_finite() {
        return Err(SimError::Diverged {
            last_valid: Box::new(world.clone()),
        });
    }
    Ok(StepOutcome {
        world: next,
        contact: contact_event,
        warnings,
    })
}
