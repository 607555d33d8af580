//! Session records: every command the loop applied, with when it arrived and
//! the control tick it took effect on.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use resqsim_core::harness::{run_schedule, EngineError, LogError, TrialLog};
use resqsim_core::{OperatorCommand, PerceptionMode, SafetyReport, Scenario};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Completed,
    /// The operator left before the trial finished; the robot was stopped.
    Interrupted,
    /// The trial faulted or ran out of time budget.
    Aborted,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Completed => "completed",
            SessionStatus::Interrupted => "interrupted",
            SessionStatus::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandOrigin {
    Operator,
    /// Zero-velocity command issued by the loop after the operator left.
    SafetyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordedCommand {
    /// Client sequence number; 0 for safety stops.
    pub seq: u64,
    /// Session time when the bridge received the frame.
    pub received_at: f64,
    /// Session time from which the command may apply (receipt plus the
    /// configured artificial latency).
    pub due_at: f64,
    pub applied_tick: u64,
    pub origin: CommandOrigin,
    pub command: OperatorCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub session_id: String,
    pub scenario: String,
    pub config_hash: String,
    pub mode: PerceptionMode,
    pub seed: u64,
    pub time_scale: f64,
    pub command_latency: f64,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Control ticks simulated.
    pub ticks: u64,
    pub report: Option<SafetyReport>,
    pub commands: Vec<RecordedCommand>,
    /// Trial log paths relative to the record file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imu: Option<String>,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported record schema version {0}")]
    Schema(u32),
    #[error(transparent)]
    Log(#[from] LogError),
}

impl SessionRecord {
    /// `(tick, command)` pairs in application order, as `run_schedule`
    /// takes them.
    pub fn schedule(&self) -> Vec<(u64, OperatorCommand)> {
        self.commands.iter().map(|c| (c.applied_tick, c.command)).collect()
    }

    /// Re-simulates the recorded command stream offline.
    pub fn resimulate(&self, scenario: &Scenario) -> Result<TrialLog, EngineError> {
        let engine = run_schedule(
            scenario.clone(),
            self.seed,
            Some(self.mode),
            &self.schedule(),
            self.ticks,
        )?;
        Ok(engine.into_log())
    }

    pub fn file_stem(&self) -> String {
        format!("session-{}", self.session_id)
    }

    /// Writes `<dir>/session-<id>.json` plus the trial log and IMU sidecar.
    /// Returns the record path.
    pub fn write(&mut self, dir: &Path, log: &TrialLog) -> Result<PathBuf, RecordError> {
        fs::create_dir_all(dir).map_err(|source| RecordError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let stem = self.file_stem();
        let log_name = format!("{stem}.jsonl");
        let imu_name = format!("{stem}.imu.csv");
        log.write(&dir.join(&log_name), &dir.join(&imu_name))?;
        self.log = Some(log_name);
        self.imu = Some(imu_name);
        let path = dir.join(format!("{stem}.json"));
        let mut text = serde_json::to_string_pretty(self).map_err(|source| RecordError::Json {
            path: path.display().to_string(),
            source,
        })?;
        text.push('\n');
        fs::write(&path, text).map_err(|source| RecordError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, RecordError> {
        let text = fs::read_to_string(path).map_err(|source| RecordError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let rec: SessionRecord = serde_json::from_str(&text).map_err(|source| RecordError::Json {
            path: path.display().to_string(),
            source,
        })?;
        if rec.schema_version != RECORD_SCHEMA_VERSION {
            return Err(RecordError::Schema(rec.schema_version));
        }
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmd(v: f64, stamp: f64) -> OperatorCommand {
        let mut c = OperatorCommand::zero(stamp);
        c.v_cmd = v;
        c
    }

    #[test]
    fn schedule_follows_application_order() {
        let s = Scenario::standard();
        let rec = SessionRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            session_id: "t".into(),
            scenario: s.name.clone(),
            config_hash: s.config_hash(),
            mode: PerceptionMode::Direct,
            seed: 3,
            time_scale: 1.0,
            command_latency: 0.0,
            status: SessionStatus::Interrupted,
            message: None,
            ticks: 40,
            report: None,
            commands: vec![
                RecordedCommand {
                    seq: 1,
                    received_at: 0.013,
                    due_at: 0.013,
                    applied_tick: 2,
                    origin: CommandOrigin::Operator,
                    command: cmd(0.1, 0.013),
                },
                RecordedCommand {
                    seq: 0,
                    received_at: 0.2,
                    due_at: 0.2,
                    applied_tick: 21,
                    origin: CommandOrigin::SafetyStop,
                    command: cmd(0.0, 0.21),
                },
            ],
            log: None,
            imu: None,
        };
        assert_eq!(rec.schedule().iter().map(|p| p.0).collect::<Vec<_>>(), vec![2, 21]);
        let log = rec.resimulate(&s).unwrap();
        assert_eq!(log.ticks.len(), 41);
        assert_eq!(log.ticks[2].command.v_cmd, 0.0);
        assert_eq!(log.ticks[3].command.v_cmd, 0.1);
        assert_eq!(log.ticks[22].command.v_cmd, 0.0);

        let dir = tempfile::tempdir().unwrap();
        let mut rec = rec;
        let path = rec.write(dir.path(), &log).unwrap();
        assert_eq!(SessionRecord::read(&path).unwrap(), rec);
        assert!(dir.path().join("session-t.imu.csv").exists());
    }
}
