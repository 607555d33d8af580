//! Actuator and proprioceptive sensor models of the robot: differential-drive
//! kinematics, the PWM-driven belt motor, the strap motor and the two
//! incremental encoders (conveyor pulley and floor omni-wheel).

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BeltMotorConfig, EncoderConfig};

#[derive(Debug, Error, PartialEq)]
pub enum VehicleError {
    #[error("track width must be positive, got {0}")]
    TrackWidth(f64),
    #[error("strap command rejected: {0}")]
    RejectedCommand(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelSpeeds {
    pub v_left: f64,
    pub v_right: f64,
}

impl WheelSpeeds {
    /// Scales both wheels down together so neither exceeds `limit`.
    pub fn limited(self, limit: f64) -> Self {
        let peak = self.v_left.abs().max(self.v_right.abs());
        if peak <= limit || peak == 0.0 {
            self
        } else {
            let k = limit / peak;
            WheelSpeeds {
                v_left: self.v_left * k,
                v_right: self.v_right * k,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub v: f64,
    pub omega: f64,
}

pub fn diff_drive_forward(ws: WheelSpeeds, track_width: f64) -> Result<Twist, VehicleError> {
    if !(track_width > 0.0) {
        return Err(VehicleError::TrackWidth(track_width));
    }
    Ok(Twist {
        v: (ws.v_left + ws.v_right) / 2.0,
        omega: (ws.v_right - ws.v_left) / track_width,
    })
}

pub fn diff_drive_inverse(twist: Twist, track_width: f64) -> Result<WheelSpeeds, VehicleError> {
    if !(track_width > 0.0) {
        return Err(VehicleError::TrackWidth(track_width));
    }
    let half = twist.omega * track_width / 2.0;
    Ok(WheelSpeeds {
        v_left: twist.v - half,
        v_right: twist.v + half,
    })
}

/// Incremental rotary encoder on a wheel or pulley of known radius.
///
/// The exact shaft angle is integrated every physics step; only whole counts
/// are observable. Speed is reported from the count difference over a
/// measurement window, so the error is at most one count per window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub counts_per_rev: u32,
    pub radius: f64,
    pub accumulated_count: i64,
    /// Exact shaft angle, radians.
    angle: f64,
    /// Count at the start of the current measurement window.
    window_start: i64,
}

impl EncoderModel {
    pub fn new(counts_per_rev: u32, radius: f64) -> Self {
        Self {
            counts_per_rev,
            radius,
            accumulated_count: 0,
            angle: 0.0,
            window_start: 0,
        }
    }

    pub fn from_config(cfg: &EncoderConfig) -> Self {
        Self::new(cfg.counts_per_rev, cfg.radius)
    }

    /// Surface travel per count, metres.
    pub fn count_length(&self) -> f64 {
        TAU * self.radius / self.counts_per_rev as f64
    }

    /// Advances the shaft by the travel of `true_speed` over `dt`.
    pub fn accumulate(&mut self, true_speed: f64, dt: f64) {
        self.angle += true_speed * dt / self.radius;
        let rad_per_count = TAU / self.counts_per_rev as f64;
        self.accumulated_count = (self.angle / rad_per_count).floor() as i64;
    }

    /// Closes the measurement window and returns the count delta in it.
    pub fn take_window(&mut self) -> i64 {
        let delta = self.accumulated_count - self.window_start;
        self.window_start = self.accumulated_count;
        delta
    }
}

/// One encoder measurement window of length `dt` at constant `true_speed`.
pub fn encoder_tick(enc: &EncoderModel, true_speed: f64, dt: f64) -> (EncoderModel, f64) {
    let mut next = enc.clone();
    next.accumulate(true_speed, dt);
    let delta = next.take_window();
    let measured = delta as f64 * next.count_length() / dt;
    (next, measured)
}

/// First-order model of the PWM belt drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeltMotorModel {
    pub duty: f64,
    pub v_belt_ss_gain: f64,
    pub tau: f64,
    pub v_belt: f64,
}

impl BeltMotorModel {
    pub fn new(cfg: &BeltMotorConfig, v_belt: f64) -> Self {
        Self {
            duty: 0.0,
            v_belt_ss_gain: cfg.gain,
            tau: cfg.tau,
            v_belt,
        }
    }
}

/// Advances the belt by `dt` under `duty`. Out-of-range duty is clamped and
/// reported through the returned flag.
pub fn belt_motor_step(m: &BeltMotorModel, duty: f64, dt: f64) -> (BeltMotorModel, bool) {
    let clamped = duty.clamp(-1.0, 1.0);
    let was_clamped = clamped != duty;
    if was_clamped {
        log::warn!("belt duty {duty} out of range, clamped to {clamped}");
    }
    let target = clamped * m.v_belt_ss_gain;
    let alpha = (dt / m.tau).min(1.0);
    let v = (m.v_belt + alpha * (target - m.v_belt)).clamp(-m.v_belt_ss_gain, m.v_belt_ss_gain);
    (
        BeltMotorModel {
            duty: clamped,
            v_belt: v,
            ..*m
        },
        was_clamped,
    )
}

/// Stretcher strap state. Fastening and releasing carry elapsed motor time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum StrapState {
    Open,
    Fastening { elapsed: f64 },
    Fastened,
    Releasing { elapsed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrapCommand {
    Fasten,
    Release,
    Hold,
}

/// Advances the strap motor. `fully_onboard` must be asserted by the caller
/// for a fasten command to be accepted from `Open`.
pub fn strap_step(
    state: StrapState,
    command: StrapCommand,
    dt: f64,
    duration: f64,
    fully_onboard: bool,
) -> Result<StrapState, VehicleError> {
    use StrapState::*;
    let next = match (state, command) {
        (Open, StrapCommand::Fasten) => {
            if !fully_onboard {
                return Err(VehicleError::RejectedCommand(
                    "fasten requires the casualty fully onboard",
                ));
            }
            Fastening { elapsed: 0.0 }
        }
        (Fastened, StrapCommand::Release) => Releasing { elapsed: 0.0 },
        // Reversal mid-travel keeps the travelled fraction.
        (Fastening { elapsed }, StrapCommand::Release) => Releasing {
            elapsed: (duration - elapsed).max(0.0),
        },
        (Releasing { elapsed }, StrapCommand::Fasten) => Fastening {
            elapsed: (duration - elapsed).max(0.0),
        },
        (s, _) => s,
    };
    Ok(match next {
        Fastening { elapsed } => {
            let e = elapsed + dt;
            if e >= duration - 1e-9 {
                Fastened
            } else {
                Fastening { elapsed: e }
            }
        }
        Releasing { elapsed } => {
            let e = elapsed + dt;
            if e >= duration - 1e-9 {
                Open
            } else {
                Releasing { elapsed: e }
            }
        }
        s => s,
    })
}
