//! Trial orchestration: the shared control loop, logs, batches and replay.

pub mod batch;
pub mod engine;
pub mod log;
pub mod replay;
pub mod trial;

pub use batch::{load_batch, run_batch, BatchConfig, BatchError, BatchResult, BatchStats, Manifest, TrialReport};
pub use engine::{merge_commands, run_schedule, Engine, EngineError, TickOutput};
pub use log::{EventKind, LoadedLog, LogError, LogEvent, TickRecord, TrialLog};
pub use trial::{run_trial, TrialConfig, TrialFault, TrialRun, TrialStatus};
