//! Deterministic simulator for a tracked casualty-extraction robot: vehicle
//! and casualty physics, belt synchronisation control, head-IMU safety
//! metrics, and the trial harness.

pub mod config;
pub mod control;
pub mod geometry;
pub mod harness;
pub mod safety;
pub mod sim;
pub mod snapshot;
pub mod vehicle;

pub use config::{ConfigError, PerceptionMode, Scenario};
pub use control::{OperatorCommand, PhaseId};
pub use geometry::Pose2D;
pub use safety::{DistributionStats, SafetyReport};
pub use sim::WorldState;
pub use snapshot::StateSnapshot;
