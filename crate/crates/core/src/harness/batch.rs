//! Batches of scripted trials across perception modes, with a manifest and
//! per-mode statistics written next to the per-trial files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PerceptionMode, Scenario};
use crate::safety::{distribution, DistributionStats, Metric, SafetyReport};

use super::log::{LogError, TrialLog};
use super::trial::{run_trial, TrialConfig, TrialStatus};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Error)]
pub enum BatchError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest schema version {0} is not supported")]
    Schema(u32),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BatchError + '_ {
    move |source| BatchError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub scenario: Scenario,
    pub modes: Vec<PerceptionMode>,
    pub trials_per_mode: u32,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    pub parallel: bool,
}

/// Per-trial report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialReport {
    pub trial_id: String,
    pub mode: PerceptionMode,
    pub seed: u64,
    pub config_hash: String,
    pub status: TrialStatus,
    pub message: Option<String>,
    pub report: Option<SafetyReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub trial_id: String,
    pub mode: PerceptionMode,
    pub seed: u64,
    pub status: TrialStatus,
    /// Paths are relative to the manifest's directory.
    pub log: String,
    pub imu: String,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub scenario: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub trials_per_mode: u32,
    pub modes: Vec<PerceptionMode>,
    pub stats: String,
    pub trials: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricStats {
    pub metric: Metric,
    pub groups: Vec<DistributionStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchStats {
    pub config_hash: String,
    /// Completed (ok) trials per mode, in `modes` order.
    pub completed: Vec<(PerceptionMode, usize)>,
    pub metrics: Vec<MetricStats>,
}

impl BatchStats {
    pub fn from_reports(
        config_hash: &str,
        modes: &[PerceptionMode],
        reports: &[(PerceptionMode, SafetyReport)],
    ) -> Self {
        let metrics = [
            Metric::Acceleration,
            Metric::ContactVelocity,
            Metric::Displacement,
            Metric::Force,
        ]
        .into_iter()
        .map(|metric| MetricStats {
            metric,
            groups: modes
                .iter()
                .filter_map(|&mode| {
                    let values: Vec<f64> = reports
                        .iter()
                        .filter(|(m, _)| *m == mode)
                        .map(|(_, r)| r.metric(metric))
                        .collect();
                    distribution(&values, Some(mode))
                })
                .collect(),
        })
        .collect();
        BatchStats {
            config_hash: config_hash.to_string(),
            completed: modes
                .iter()
                .map(|&m| (m, reports.iter().filter(|(r, _)| *r == m).count()))
                .collect(),
            metrics,
        }
    }

    pub fn group(&self, metric: Metric, mode: PerceptionMode) -> Option<&DistributionStats> {
        self.metrics
            .iter()
            .find(|m| m.metric == metric)?
            .groups
            .iter()
            .find(|g| g.mode == Some(mode))
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub manifest: Manifest,
    pub stats: BatchStats,
    pub reports: Vec<TrialReport>,
}

impl BatchResult {
    pub fn failed(&self) -> usize {
        self.reports.iter().filter(|r| r.status != TrialStatus::Ok).count()
    }
}

pub fn trial_id(mode: PerceptionMode, index: u32) -> String {
    format!("{}-{index:03}", mode.as_str())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BatchError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| BatchError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BatchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| BatchError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn run_one(
    cfg: &BatchConfig,
    hash: &str,
    mode: PerceptionMode,
    index: u32,
) -> Result<(ManifestEntry, TrialReport), BatchError> {
    let id = trial_id(mode, index);
    let seed = cfg.base_seed + u64::from(index);
    let trial = TrialConfig {
        scenario: cfg.scenario.clone(),
        mode,
        seed,
        ideal_operator: false,
    };
    let (log, status, message, report, warnings): (TrialLog, _, _, _, _) = match run_trial(&trial) {
        Ok(run) => (run.log, TrialStatus::Ok, None, Some(run.report), run.warnings),
        Err(f) => {
            log::warn!("{id}: {f}");
            (*f.log, f.status, Some(f.message), None, Vec::new())
        }
    };
    let entry = ManifestEntry {
        trial_id: id.clone(),
        mode,
        seed,
        status,
        log: format!("trials/{id}.jsonl"),
        imu: format!("trials/{id}.imu.csv"),
        report: format!("trials/{id}.report.json"),
    };
    let tr = TrialReport {
        trial_id: id,
        mode,
        seed,
        config_hash: hash.to_string(),
        status,
        message,
        report,
        warnings,
    };
    log.write(&cfg.out_dir.join(&entry.log), &cfg.out_dir.join(&entry.imu))?;
    write_json(&cfg.out_dir.join(&entry.report), &tr)?;
    Ok((entry, tr))
}

/// Runs `trials_per_mode` trials for each mode. Seeds within a mode are
/// `base_seed + index`, so every mode sees the same seed sequence. Output is
/// identical whether or not trials run in parallel.
pub fn run_batch(cfg: &BatchConfig) -> Result<BatchResult, BatchError> {
    let trials_dir = cfg.out_dir.join("trials");
    fs::create_dir_all(&trials_dir).map_err(io_err(&trials_dir))?;
    let hash = cfg.scenario.config_hash();
    let jobs: Vec<(PerceptionMode, u32)> = cfg
        .modes
        .iter()
        .flat_map(|&m| (0..cfg.trials_per_mode).map(move |i| (m, i)))
        .collect();
    let results: Vec<Result<(ManifestEntry, TrialReport), BatchError>> = if cfg.parallel {
        jobs.par_iter().map(|&(m, i)| run_one(cfg, &hash, m, i)).collect()
    } else {
        jobs.iter().map(|&(m, i)| run_one(cfg, &hash, m, i)).collect()
    };
    let mut entries = Vec::with_capacity(results.len());
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        let (e, t) = r?;
        entries.push(e);
        reports.push(t);
    }

    let ok: Vec<(PerceptionMode, SafetyReport)> = reports
        .iter()
        .filter_map(|t| t.report.clone().map(|r| (t.mode, r)))
        .collect();
    let stats = BatchStats::from_reports(&hash, &cfg.modes, &ok);
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        scenario: cfg.scenario.name.clone(),
        config_hash: hash,
        base_seed: cfg.base_seed,
        trials_per_mode: cfg.trials_per_mode,
        modes: cfg.modes.clone(),
        stats: STATS_FILE.to_string(),
        trials: entries,
    };
    write_json(&cfg.out_dir.join(STATS_FILE), &stats)?;
    write_json(&cfg.out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(BatchResult {
        manifest,
        stats,
        reports,
    })
}

/// Loads a manifest and all trial reports it lists.
pub fn load_batch(manifest_path: &Path) -> Result<(Manifest, Vec<TrialReport>), BatchError> {
    let manifest: Manifest = read_json(manifest_path)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(BatchError::Schema(manifest.schema_version));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let reports = manifest
        .trials
        .iter()
        .map(|e| read_json(&base.join(&e.report)))
        .collect::<Result<Vec<TrialReport>, _>>()?;
    Ok((manifest, reports))
}
