//! Trial logs: one JSONL file (header line, then one record per control tick
//! with that tick's events after it) plus a `t,a` CSV of head IMU samples.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PerceptionMode, SafetyConfig};
use crate::control::{OperatorCommand, PhaseId};
use crate::safety::{extract_metrics, ImuSample, MetricsOutcome, SafetyError};
use crate::sim::{ContactEvent, WorldState};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("log schema version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("log does not start with a header line")]
    MissingHeader,
    #[error("IMU CSV: {0}")]
    Csv(#[from] csv::Error),
}

impl LogError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        LogError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub schema_version: u32,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: Option<PerceptionMode>,
    pub dt: f64,
    pub control_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub phase: PhaseId,
    pub command: OperatorCommand,
    pub duty: f64,
    pub world: WorldState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PhaseChange { from: PhaseId, to: PhaseId },
    Contact(ContactEvent),
    StrapTrigger { accepted: bool },
    Warning(String),
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEvent {
    pub tick: u64,
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(LogHeader),
    Tick(TickRecord),
    Event(LogEvent),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    pub events: Vec<LogEvent>,
    pub imu: Vec<ImuSample>,
}

/// A log read back from disk. `truncated` is set when the final line was
/// incomplete and dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedLog {
    pub log: TrialLog,
    pub truncated: bool,
}

impl TrialLog {
    pub fn contact(&self) -> Option<&ContactEvent> {
        self.events.iter().find_map(|e| match &e.kind {
            EventKind::Contact(c) => Some(c),
            _ => None,
        })
    }

    pub fn final_world(&self) -> Option<&WorldState> {
        self.ticks.last().map(|r| &r.world)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Warning(w) => Some(w.as_str()),
            _ => None,
        })
    }

    pub fn extract_metrics(&self, cfg: &SafetyConfig) -> Result<MetricsOutcome, SafetyError> {
        extract_metrics(&self.imu, self.contact(), cfg)
    }

    pub fn write_jsonl_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut line = |l: &Line| -> io::Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")
        };
        line(&Line::Header(self.header.clone()))?;
        let mut ev = self.events.iter().peekable();
        for rec in &self.ticks {
            line(&Line::Tick(rec.clone()))?;
            while let Some(e) = ev.next_if(|e| e.tick <= rec.tick) {
                line(&Line::Event(e.clone()))?;
            }
        }
        for e in ev {
            line(&Line::Event(e.clone()))?;
        }
        Ok(())
    }

    pub fn write_imu_csv_to<W: Write>(&self, w: W) -> Result<(), LogError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "a"])?;
        for s in &self.imu {
            wr.write_record([s.t.to_string(), s.a.to_string()])?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Writes `<log_path>` and the IMU sidecar at `<imu_path>`.
    pub fn write(&self, log_path: &Path, imu_path: &Path) -> Result<(), LogError> {
        let f = File::create(log_path).map_err(|e| LogError::io(log_path, e))?;
        let mut w = BufWriter::new(f);
        self.write_jsonl_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| LogError::io(log_path, e))?;
        let f = File::create(imu_path).map_err(|e| LogError::io(imu_path, e))?;
        self.write_imu_csv_to(BufWriter::new(f))
    }

    /// Parses JSONL from `r`. A final line that fails to parse is treated as
    /// truncation; a bad line anywhere else is an error.
    pub fn read_jsonl_from<R: BufRead>(r: R) -> Result<LoadedLog, LogError> {
        let lines: Vec<String> = r
            .lines()
            .collect::<io::Result<_>>()
            .map_err(|e| LogError::Io {
                path: "<reader>".into(),
                source: e,
            })?;
        let lines: Vec<&str> = lines.iter().map(|s| s.as_str()).filter(|s| !s.trim().is_empty()).collect();
        let mut header = None;
        let mut ticks = Vec::new();
        let mut events = Vec::new();
        let mut truncated = false;
        for (i, raw) in lines.iter().enumerate() {
            let parsed: Line = match serde_json::from_str(raw) {
                Ok(l) => l,
                Err(e) if i + 1 == lines.len() && i > 0 && e.is_eof() => {
                    truncated = true;
                    break;
                }
                Err(e) => return Err(LogError::Json { line: i + 1, source: e }),
            };
            match parsed {
                Line::Header(h) if i == 0 => {
                    if h.schema_version != LOG_SCHEMA_VERSION {
                        return Err(LogError::Schema {
                            found: h.schema_version,
                            expected: LOG_SCHEMA_VERSION,
                        });
                    }
                    header = Some(h);
                }
                Line::Header(_) => return Err(LogError::MissingHeader),
                Line::Tick(t) => ticks.push(t),
                Line::Event(e) => events.push(e),
            }
            if header.is_none() {
                return Err(LogError::MissingHeader);
            }
        }
        let header = header.ok_or(LogError::MissingHeader)?;
        Ok(LoadedLog {
            log: TrialLog {
                header,
                ticks,
                events,
                imu: Vec::new(),
            },
            truncated,
        })
    }

    pub fn read_imu_csv_from<R: io::Read>(r: R) -> Result<Vec<ImuSample>, LogError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut out = Vec::new();
        for rec in rd.deserialize() {
            out.push(rec?);
        }
        Ok(out)
    }

    /// Reads a log and, if present, its IMU sidecar.
    pub fn read(log_path: &Path, imu_path: Option<&Path>) -> Result<LoadedLog, LogError> {
        let f = File::open(log_path).map_err(|e| LogError::io(log_path, e))?;
        let mut loaded = Self::read_jsonl_from(BufReader::new(f))?;
        if let Some(p) = imu_path {
            let f = File::open(p).map_err(|e| LogError::io(p, e))?;
            loaded.log.imu = Self::read_imu_csv_from(BufReader::new(f))?;
        }
        Ok(loaded)
    }
}
