//! Scenario configuration.
//!
//! A scenario is a single JSON document. Every field is required and unknown
//! fields are rejected, so a scenario file on disk always describes the whole
//! experiment. [`Scenario::standard`] is the reference configuration shipped
//! as `scenarios/default.json`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::Pose2D;

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// One milli-g in m/s².
pub const MILLI_G: f64 = STANDARD_GRAVITY * 1e-3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("override `{0}` does not name an existing scenario field")]
    UnknownOverride(String),
    #[error("override `{0}` is not of the form key.path=value")]
    MalformedOverride(String),
    #[error("invalid scenario value: {0}")]
    Invalid(String),
}

/// Operator perception mode (teleperception modality).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptionMode {
    Direct,
    Conventional,
    Immersive,
}

impl PerceptionMode {
    pub const ALL: [PerceptionMode; 3] = [
        PerceptionMode::Direct,
        PerceptionMode::Conventional,
        PerceptionMode::Immersive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerceptionMode::Direct => "direct",
            PerceptionMode::Conventional => "conventional",
            PerceptionMode::Immersive => "immersive",
        }
    }
}

impl fmt::Display for PerceptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerceptionMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(PerceptionMode::Direct),
            "conventional" => Ok(PerceptionMode::Conventional),
            "immersive" => Ok(PerceptionMode::Immersive),
            other => Err(ConfigError::Invalid(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub sim: SimConfig,
    pub robot: RobotConfig,
    pub casualty: CasualtyConfig,
    pub vehicle: VehicleConfig,
    pub control: ControlConfig,
    pub safety: SafetyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Physics step, seconds.
    pub dt: f64,
    /// Control and logging rate, Hz. Must divide the physics rate.
    pub control_rate_hz: f64,
    pub gravity: f64,
    /// Stick/slip velocity deadband, m/s.
    pub v_stick: f64,
    /// Time allowed to reach first contact, seconds.
    pub contact_budget: f64,
    /// Time allowed for the whole trial, seconds.
    pub trial_budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub initial_pose: Pose2D,
    /// Mass of the robot, kg. Only used for energy bookkeeping.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CasualtyConfig {
    /// Head crown position and body direction (crown towards feet).
    pub axis: Pose2D,
    pub head_length: f64,
    /// Crown to hip.
    pub upper_length: f64,
    pub lower_length: f64,
    pub m_head: f64,
    pub m_upper: f64,
    pub m_lower: f64,
    /// Head/ground static friction coefficient.
    pub mu_s: f64,
    /// Head/ground kinetic friction coefficient.
    pub mu_k: f64,
    /// Grip limit of the belt surface on the head.
    pub mu_belt: f64,
    /// Linear traction coefficient of the belt on a fully supported head, N·s/m.
    pub belt_traction: f64,
    /// Fraction of the edge slip speed transferred to the head at first contact.
    pub edge_coupling: f64,
    /// Minimum effective belt support once the edge roller touches the head.
    pub lip_support: f64,
    /// Neck stiffness tying the head to the (stationary) torso, N/m.
    pub neck_stiffness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub counts_per_rev: u32,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeltMotorConfig {
    /// Steady-state belt speed per unit duty, m/s.
    pub gain: f64,
    /// First-order time constant, s.
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub track_width: f64,
    pub wheel_speed_max: f64,
    pub v_base_max: f64,
    pub omega_max: f64,
    pub base_accel_max: f64,
    pub omega_accel_max: f64,
    /// Distance from the robot reference point to the bed leading edge.
    pub bed_reach: f64,
    pub bed_half_width: f64,
    /// Bed inclination, radians.
    pub bed_angle: f64,
    pub belt: BeltMotorConfig,
    pub base_encoder: EncoderConfig,
    pub belt_encoder: EncoderConfig,
    /// Time for the strap to close (or open), seconds.
    pub strap_duration: f64,
    /// Payload above which a warning is logged, kg.
    pub payload_limit: f64,
}

impl VehicleConfig {
    pub fn v_belt_max(&self) -> f64 {
        self.belt.gain
    }
}

/// How the belt is driven during a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SyncMode {
    /// PI synchronization from the two encoders.
    Closed,
    /// Constant duty whenever the belt is enabled.
    FixedDuty(f64),
    /// Belt surface speed forced to cancel the base speed, bypassing encoders.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncConfig {
    pub mode: SyncMode,
    /// Duty per m/s of sync error.
    pub kp: f64,
    /// Duty per metre of integrated sync error.
    pub ki: f64,
    /// Anti-windup bound on the integral state, m.
    pub integral_limit: f64,
    /// Number of control periods averaged by the speed estimators.
    pub speed_window: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentTolerance {
    pub lateral: f64,
    pub angular: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorProfile {
    pub reaction_delay: f64,
    pub command_noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorTable {
    pub direct: OperatorProfile,
    pub conventional: OperatorProfile,
    pub immersive: OperatorProfile,
}

impl OperatorTable {
    pub fn profile(&self, mode: PerceptionMode) -> OperatorProfile {
        match mode {
            PerceptionMode::Direct => self.direct,
            PerceptionMode::Conventional => self.conventional,
            PerceptionMode::Immersive => self.immersive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub align_speed: f64,
    pub approach_speed: f64,
    pub loading_speed: f64,
    /// Pure-pursuit lookahead along the casualty axis, m.
    pub lookahead: f64,
    /// Rate at which the scripted operator issues commands, Hz.
    pub command_rate_hz: f64,
    pub table: OperatorTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub sync: SyncConfig,
    pub alignment: AlignmentTolerance,
    pub operator: OperatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuConfig {
    pub sample_rate_hz: f64,
    pub resolution: f64,
    pub bias_instability: f64,
    /// Standard deviation of the per-sample bias random-walk increment.
    pub bias_walk_std: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Approximated head mass used by the force estimate, kg.
    pub m_head: f64,
    /// Static friction between head and ground, N.
    pub f_static: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    pub imu: ImuConfig,
    pub estimator: EstimatorConfig,
    /// Analysis window after first contact, seconds.
    pub window: f64,
    pub thresholds: crate::safety::ThresholdTable,
}

impl Scenario {
    /// The reference scenario: aligned-ish start 1.2 m from the casualty,
    /// closed-loop belt synchronization.
    pub fn standard() -> Self {
        Scenario {
            name: "standard".into(),
            sim: SimConfig {
                dt: 0.001,
                control_rate_hz: 100.0,
                gravity: STANDARD_GRAVITY,
                v_stick: 1e-4,
                contact_budget: 60.0,
                trial_budget: 180.0,
            },
            robot: RobotConfig {
                initial_pose: Pose2D::new(-1.6, 0.08, 0.06),
                mass: 150.0,
            },
            casualty: CasualtyConfig {
                axis: Pose2D::new(0.0, 0.0, 0.0),
                head_length: 0.12,
                upper_length: 0.85,
                lower_length: 0.9,
                m_head: 4.5,
                m_upper: 40.0,
                m_lower: 30.0,
                mu_s: 0.52,
                mu_k: 0.45,
                mu_belt: 0.8,
                belt_traction: 500.0,
                edge_coupling: 0.17,
                lip_support: 0.25,
                neck_stiffness: 450.0,
            },
            vehicle: VehicleConfig {
                track_width: 0.5,
                wheel_speed_max: 1.0,
                v_base_max: 0.5,
                omega_max: 1.0,
                base_accel_max: 0.5,
                omega_accel_max: 2.0,
                bed_reach: 0.6,
                bed_half_width: 0.3,
                bed_angle: 10f64.to_radians(),
                belt: BeltMotorConfig {
                    gain: 0.5,
                    tau: 0.2,
                },
                base_encoder: EncoderConfig {
                    counts_per_rev: 1024,
                    radius: 0.05,
                },
                belt_encoder: EncoderConfig {
                    counts_per_rev: 1024,
                    radius: 0.05,
                },
                strap_duration: 2.0,
                payload_limit: 100.0,
            },
            control: ControlConfig {
                sync: SyncConfig {
                    mode: SyncMode::Closed,
                    kp: 3.0,
                    ki: 2.0,
                    integral_limit: 0.1,
                    speed_window: 5,
                },
                alignment: AlignmentTolerance {
                    lateral: 0.02,
                    angular: 2f64.to_radians(),
                },
                operator: OperatorConfig {
                    align_speed: 0.1,
                    approach_speed: 0.05,
                    loading_speed: 0.08,
                    lookahead: 0.15,
                    command_rate_hz: 20.0,
                    table: OperatorTable {
                        direct: OperatorProfile {
                            reaction_delay: 0.10,
                            command_noise_std: 0.005,
                        },
                        conventional: OperatorProfile {
                            reaction_delay: 0.30,
                            command_noise_std: 0.020,
                        },
                        immersive: OperatorProfile {
                            reaction_delay: 0.15,
                            command_noise_std: 0.010,
                        },
                    },
                },
            },
            safety: SafetyConfig {
                imu: ImuConfig {
                    sample_rate_hz: 100.0,
                    resolution: 0.1 * MILLI_G,
                    bias_instability: 0.04 * MILLI_G,
                    bias_walk_std: 0.002 * MILLI_G,
                    noise_std: 0.2 * MILLI_G,
                },
                estimator: EstimatorConfig {
                    m_head: 4.50,
                    f_static: 22.94,
                },
                window: 2.0,
                thresholds: crate::safety::ThresholdTable::placeholder(),
            },
        }
    }

    /// The rough counterpart of [`Scenario::standard`]: belt synchronization
    /// disabled and the belt driven at a fixed duty.
    pub fn rough() -> Self {
        let mut s = Self::standard();
        s.name = "rough".into();
        s.control.sync.mode = SyncMode::FixedDuty(-0.65);
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with_overrides(path, &[])
    }

    /// Loads a scenario and applies `key.path=value` overrides before
    /// validation. Values are parsed as JSON, falling back to a string.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut value: Value = serde_json::from_str(&text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let s: Scenario = serde_json::from_value(value)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn config_hash(&self) -> String {
        let compact = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&compact))
    }

    /// Physics steps per control period.
    pub fn steps_per_control(&self) -> u64 {
        (1.0 / (self.sim.control_rate_hz * self.sim.dt)).round() as u64
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.sim.control_rate_hz
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.sim.dt > 0.0) || !(self.sim.control_rate_hz > 0.0) {
            return bad("dt and control_rate_hz must be positive");
        }
        let ratio = 1.0 / (self.sim.control_rate_hz * self.sim.dt);
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad("control period must be an integer number of physics steps");
        }
        let imu_ratio = self.sim.control_rate_hz / self.safety.imu.sample_rate_hz;
        if (imu_ratio - 1.0).abs() > 1e-12 {
            return bad("IMU sample rate must equal the control rate");
        }
        let c = &self.casualty;
        if !(c.mu_s > 0.0 && c.mu_k > 0.0 && c.mu_k <= c.mu_s) {
            return bad("friction coefficients must satisfy 0 < mu_k <= mu_s");
        }
        if !(c.m_head > 0.0 && c.head_length > 0.0 && c.upper_length >= c.head_length) {
            return bad("casualty geometry and head mass must be positive");
        }
        if !(0.0..=1.0).contains(&c.edge_coupling) || !(0.0..=1.0).contains(&c.lip_support) {
            return bad("edge_coupling and lip_support must lie in [0, 1]");
        }
        if !(c.belt_traction >= 0.0 && c.neck_stiffness >= 0.0) {
            return bad("belt_traction and neck_stiffness must be non-negative");
        }
        if !(self.control.operator.lookahead > 0.0) {
            return bad("operator lookahead must be positive");
        }
        let v = &self.vehicle;
        if !(v.track_width > 0.0 && v.belt.tau > 0.0 && v.belt.gain > 0.0) {
            return bad("track_width, belt gain and tau must be positive");
        }
        if self.sim.dt > v.belt.tau {
            return bad("physics step must not exceed the belt time constant");
        }
        if let SyncMode::FixedDuty(d) = self.control.sync.mode {
            if !(-1.0..=1.0).contains(&d) {
                return bad("fixed duty must lie in [-1, 1]");
            }
        }
        if self.control.sync.speed_window == 0 {
            return bad("speed_window must be at least 1");
        }
        for p in [
            self.control.operator.table.direct,
            self.control.operator.table.conventional,
            self.control.operator.table.immersive,
        ] {
            if p.command_noise_std < 0.0 || p.reaction_delay < 0.0 {
                return bad("operator noise and delay must be non-negative");
            }
        }
        self.safety
            .thresholds
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::MalformedOverride(assignment.to_string()))?;
    let new_value: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cursor = root;
    for part in key.split('.') {
        cursor = match cursor {
            Value::Object(map) => map
                .get_mut(part)
                .ok_or_else(|| ConfigError::UnknownOverride(key.to_string()))?,
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| ConfigError::UnknownOverride(key.to_string()))?;
                items
                    .get_mut(idx)
                    .ok_or_else(|| ConfigError::UnknownOverride(key.to_string()))?
            }
            _ => return Err(ConfigError::UnknownOverride(key.to_string())),
        };
    }
    *cursor = new_value;
    Ok(())
}
