//! Head IMU model, safety metric extraction, the impact force estimate,
//! threshold verdicts and cross-trial statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ImuConfig, PerceptionMode, SafetyConfig};
use crate::sim::ContactEvent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("IMU sample time {t} is not on the {rate} Hz grid")]
    OffGrid { t: f64, rate: f64 },
    #[error("IMU sample time {t} does not advance past the previous sample")]
    NotIncreasing { t: f64 },
    #[error("force estimate inputs must be non-negative with positive mass")]
    Domain,
    #[error("trial log has no contact event")]
    NoContact,
    #[error("no IMU samples after contact at t={0:.3} s")]
    NoPostContactSamples(f64),
    #[error("no reports for mode `{0}`")]
    MissingGroup(PerceptionMode),
    #[error("threshold `{0}` must have a positive limit")]
    BadThreshold(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// Longitudinal head acceleration, m/s².
    pub a: f64,
}

/// Single-axis accelerometer on the dummy's head.
///
/// Output is `quantize(true + bias + noise)` with round-half-to-even
/// quantization to `resolution`. The bias is a random walk held inside
/// `±bias_instability`.
#[derive(Debug, Clone)]
pub struct ImuModel {
    pub sample_rate: f64,
    pub resolution: f64,
    pub bias: f64,
    pub bias_instability: f64,
    pub bias_walk_std: f64,
    pub noise_std: f64,
    pub seed: u64,
    rng: ChaCha8Rng,
    last_index: Option<i64>,
}

impl ImuModel {
    pub fn new(cfg: &ImuConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Self {
            sample_rate: cfg.sample_rate_hz,
            resolution: cfg.resolution,
            bias: 0.0,
            bias_instability: cfg.bias_instability,
            bias_walk_std: cfg.bias_walk_std,
            noise_std: cfg.noise_std,
            seed,
            rng,
            last_index: None,
        }
    }

    /// Noise- and bias-free sensor with the given resolution.
    pub fn ideal(sample_rate: f64, resolution: f64) -> Self {
        let cfg = ImuConfig {
            sample_rate_hz: sample_rate,
            resolution,
            bias_instability: 0.0,
            bias_walk_std: 0.0,
            noise_std: 0.0,
        };
        Self::new(&cfg, 0)
    }

    pub fn quantize(&self, a: f64) -> f64 {
        if self.resolution > 0.0 {
            (a / self.resolution).round_ties_even() * self.resolution
        } else {
            a
        }
    }
}

pub fn imu_sample(imu: &mut ImuModel, true_acc: f64, t: f64) -> Result<ImuSample, SafetyError> {
    let scaled = t * imu.sample_rate;
    let index = scaled.round();
    if (scaled - index).abs() > 1e-6 {
        return Err(SafetyError::OffGrid {
            t,
            rate: imu.sample_rate,
        });
    }
    let index = index as i64;
    if imu.last_index.is_some_and(|last| index <= last) {
        return Err(SafetyError::NotIncreasing { t });
    }
    imu.last_index = Some(index);
    if imu.bias_walk_std > 0.0 {
        let step = Normal::new(0.0, imu.bias_walk_std)
            .expect("finite std")
            .sample(&mut imu.rng);
        imu.bias = (imu.bias + step).clamp(-imu.bias_instability, imu.bias_instability);
    }
    let noise = if imu.noise_std > 0.0 {
        Normal::new(0.0, imu.noise_std)
            .expect("finite std")
            .sample(&mut imu.rng)
    } else {
        0.0
    };
    Ok(ImuSample {
        t: index as f64 / imu.sample_rate,
        a: imu.quantize(true_acc + imu.bias + noise),
    })
}

/// Impact force estimate: head mass times peak acceleration plus the
/// head/ground static friction force.
pub fn estimate_force(a_max: f64, m_head: f64, f_static: f64) -> Result<f64, SafetyError> {
    if !(m_head > 0.0) || f_static < 0.0 || a_max < 0.0 || !a_max.is_finite() {
        return Err(SafetyError::Domain);
    }
    Ok(m_head * a_max + f_static)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Acceleration,
    ContactVelocity,
    Displacement,
    Force,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub name: String,
    pub metric: Metric,
    pub limit: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdTable {
    pub entries: Vec<Threshold>,
}

impl ThresholdTable {
    /// Stand-in limits above every reported trial value. Replace with
    /// literature values for real use.
    pub fn placeholder() -> Self {
        let entry = |name: &str, metric, limit| Threshold {
            name: name.into(),
            metric,
            limit,
            source: "placeholder".into(),
        };
        Self {
            entries: vec![
                entry("head_acceleration", Metric::Acceleration, 10.0),
                entry("contact_velocity", Metric::ContactVelocity, 0.5),
                entry("head_displacement", Metric::Displacement, 0.1),
                entry("impact_force", Metric::Force, 100.0),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), SafetyError> {
        match self.entries.iter().find(|e| !(e.limit > 0.0)) {
            Some(e) => Err(SafetyError::BadThreshold(e.name.clone())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub limit: f64,
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub a_max: f64,
    pub v_max_contact: f64,
    pub head_displacement: f64,
    pub f_max: f64,
    pub t_contact: f64,
    pub verdicts: Vec<Verdict>,
}

impl SafetyReport {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Acceleration => self.a_max,
            Metric::ContactVelocity => self.v_max_contact,
            Metric::Displacement => self.head_displacement,
            Metric::Force => self.f_max,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// A value passes when it lies strictly below the limit.
pub fn verdicts(report: &SafetyReport, table: &ThresholdTable) -> Vec<Verdict> {
    table
        .entries
        .iter()
        .map(|e| {
            let value = report.metric(e.metric);
            Verdict {
                name: e.name.clone(),
                limit: e.limit,
                value,
                pass: value < e.limit,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsOutcome {
    pub report: SafetyReport,
    pub warnings: Vec<String>,
}

/// Safety metrics over `[t_contact, t_contact + window]`.
///
/// Velocity and displacement are trapezoidal integrals of the IMU signal,
/// started at rest from the last sample at or before contact.
pub fn extract_metrics(
    imu: &[ImuSample],
    contact: Option<&ContactEvent>,
    cfg: &SafetyConfig,
) -> Result<MetricsOutcome, SafetyError> {
    let contact = contact.ok_or(SafetyError::NoContact)?;
    let t0 = contact.t_contact;
    let end = t0 + cfg.window;
    let eps = 1e-9;
    let first_after = imu.partition_point(|s| s.t < t0 - eps);
    if first_after >= imu.len() {
        return Err(SafetyError::NoPostContactSamples(t0));
    }
    let start = if imu[first_after].t > t0 + eps && first_after > 0 {
        first_after - 1
    } else {
        first_after
    };

    let mut warnings = Vec::new();
    let last_t = imu.last().map(|s| s.t).unwrap_or(t0);
    if last_t < end - eps {
        warnings.push(format!(
            "short window: {:.3} s of {:.3} s after contact",
            last_t - t0,
            cfg.window
        ));
    }

    let mut a_max: f64 = 0.0;
    let mut v_max: f64 = 0.0;
    let mut x_max: f64 = 0.0;
    let (mut v, mut x) = (0.0, 0.0);
    let mut prev = imu[start];
    if prev.t >= t0 - eps {
        a_max = prev.a.abs();
    }
    for s in imu[start + 1..].iter().take_while(|s| s.t <= end + eps) {
        let h = s.t - prev.t;
        let v_next = v + 0.5 * (prev.a + s.a) * h;
        x += 0.5 * (v + v_next) * h;
        v = v_next;
        a_max = a_max.max(s.a.abs());
        v_max = v_max.max(v.abs());
        x_max = x_max.max(x.abs());
        prev = *s;
    }

    let f_max = estimate_force(a_max, cfg.estimator.m_head, cfg.estimator.f_static)?;
    let mut report = SafetyReport {
        a_max,
        v_max_contact: v_max,
        head_displacement: x_max,
        f_max,
        t_contact: t0,
        verdicts: Vec::new(),
    };
    report.verdicts = verdicts(&report, &cfg.thresholds);
    Ok(MetricsOutcome { report, warnings })
}

/// Five-number summary with Tukey (1.5·IQR) whiskers.
///
/// Quartiles use linear interpolation at rank `p·(n+1)` (1-based), clamped
/// to the sample range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub mode: Option<PerceptionMode>,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    /// Fewer than five samples in the group.
    pub small_sample: bool,
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * (n as f64 + 1.0)).clamp(1.0, n as f64);
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo >= n {
        sorted[n - 1]
    } else {
        sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
    }
}

pub fn distribution(values: &[f64], mode: Option<PerceptionMode>) -> Option<DistributionStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || sorted.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence);
    Some(DistributionStats {
        mode,
        n: sorted.len(),
        min: sorted[0],
        q1,
        median: quantile_sorted(&sorted, 0.5),
        q3,
        max: sorted[sorted.len() - 1],
        whisker_low: inside().fold(f64::INFINITY, f64::min),
        whisker_high: inside().fold(f64::NEG_INFINITY, f64::max),
        outliers: sorted
            .iter()
            .copied()
            .filter(|v| *v < lo_fence || *v > hi_fence)
            .collect(),
        small_sample: sorted.len() < 5,
    })
}

/// Per-mode distribution of `f_max`.
pub fn aggregate_reports(
    reports: &[(PerceptionMode, &SafetyReport)],
    modes: &[PerceptionMode],
) -> Result<Vec<DistributionStats>, SafetyError> {
    modes
        .iter()
        .map(|&mode| {
            let values: Vec<f64> = reports
                .iter()
                .filter(|(m, _)| *m == mode)
                .map(|(_, r)| r.f_max)
                .collect();
            distribution(&values, Some(mode)).ok_or(SafetyError::MissingGroup(mode))
        })
        .collect()
}
