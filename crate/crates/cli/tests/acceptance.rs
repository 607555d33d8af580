//! Acceptance gate. Runs every primary criterion at its stated tolerance and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fail.

#[path = "../../teleop/tests/support/strategies.rs"]
mod strategies;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::net::TcpListener;

use resqsim_core::config::{EncoderConfig, SyncMode};
use resqsim_core::control::{
    operator_policy, sync_control, ScriptedOperator, SyncControllerState, WindowedSpeed,
};
use resqsim_core::harness::batch::Manifest;
use resqsim_core::harness::{run_trial, Engine, TrialConfig};
use resqsim_core::safety::{
    aggregate_reports, estimate_force, extract_metrics, imu_sample, verdicts, ImuModel, ImuSample,
    Metric, Threshold, ThresholdTable,
};
use resqsim_core::sim::ContactEvent;
use resqsim_core::snapshot::{apply_visibility, VisibilityConfig};
use resqsim_core::vehicle::{belt_motor_step, BeltMotorModel, EncoderModel};
use resqsim_core::{OperatorCommand, PerceptionMode, PhaseId, SafetyReport, Scenario};
use resqsim_teleop::client::{self, run_scripted, ScriptedClientConfig};
use resqsim_teleop::protocol::{decode, encode, ByeReason};
use resqsim_teleop::{Server, SessionConfig, SessionStatus};

const BIN: &str = env!("CARGO_BIN_EXE_resqsim");

const METRICS: [Metric; 4] = [
    Metric::Acceleration,
    Metric::ContactVelocity,
    Metric::Displacement,
    Metric::Force,
];

/// Smooth and rough trial rows as published: acceleration m/s^2, contact
/// velocity m/s, head displacement m, impact force N.
const SMOOTH_ROW: [f64; 4] = [0.154, 0.015, 0.004, 23.63];
const ROUGH_ROW: [f64; 4] = [4.042, 0.16, 0.051, 41.12];

type Outcome = Result<String, String>;

/// A property runner with no failure files; the gate only reports.
fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn trial(scenario: &Scenario, mode: PerceptionMode, seed: u64) -> Result<SafetyReport, String> {
    run_trial(&TrialConfig {
        scenario: scenario.clone(),
        mode,
        seed,
        ideal_operator: false,
    })
    .map(|r| r.report)
    .map_err(|f| format!("{mode} seed {seed}: {f}"))
}

// 1 -------------------------------------------------------------------------

fn force_estimator() -> Outcome {
    // Cramer's rule on f = m a + F_s through both rows.
    let (a1, f1, a2, f2) = (SMOOTH_ROW[0], SMOOTH_ROW[3], ROUGH_ROW[0], ROUGH_ROW[3]);
    let det = a1 - a2;
    let m = (f1 - f2) / det;
    let fs = (a1 * f2 - a2 * f1) / det;
    ensure((m - 4.50).abs() < 0.005 && (fs - 22.94).abs() < 0.005, || {
        format!("linear solve gives m {m:.4}, F_s {fs:.4}")
    })?;
    let est = Scenario::standard().safety.estimator;
    ensure(est.m_head == (m * 100.0).round() / 100.0 && est.f_static == (fs * 100.0).round() / 100.0, || {
        format!("defaults m {} F_s {} differ from solve", est.m_head, est.f_static)
    })?;
    let mut worst = 0.0f64;
    for (a, f) in [(a1, f1), (a2, f2)] {
        let got = estimate_force(a, 4.50, 22.94).map_err(|e| e.to_string())?;
        let rel = (got - f).abs() / f;
        worst = worst.max(rel);
        ensure(rel < 0.005, || format!("a = {a}: {got:.3} N vs {f} N"))?;
    }
    Ok(format!(
        "m {m:.4} kg, F_s {fs:.4} N; 23.63 and 41.12 N reproduced, worst {:.3}%",
        worst * 100.0
    ))
}

// 2 -------------------------------------------------------------------------

fn smooth_vs_rough() -> Outcome {
    let started = Instant::now();
    let (smooth, rough) = (Scenario::standard(), Scenario::rough());
    let mut v_range = (f64::INFINITY, 0.0f64);
    for seed in 0..5 {
        let s = trial(&smooth, PerceptionMode::Direct, seed)?;
        let r = trial(&rough, PerceptionMode::Direct, seed)?;
        for m in METRICS {
            ensure(s.metric(m) < r.metric(m), || {
                format!("seed {seed} {m:?}: smooth {} >= rough {}", s.metric(m), r.metric(m))
            })?;
        }
        ensure((0.1..=0.25).contains(&r.v_max_contact), || {
            format!("seed {seed}: rough v_max_contact {}", r.v_max_contact)
        })?;
        v_range = (v_range.0.min(r.v_max_contact), v_range.1.max(r.v_max_contact));
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:.2?}"))?;
    Ok(format!(
        "5 seeds, smooth < rough on all metrics; rough v_contact {:.3}..{:.3} m/s; {elapsed:.2?}",
        v_range.0, v_range.1
    ))
}

// 3 -------------------------------------------------------------------------

fn sync_neutrality() -> Outcome {
    let mut s = Scenario::standard();
    s.control.sync.mode = SyncMode::Exact;
    let mode = PerceptionMode::Direct;
    let ticks = (30.0 * s.sim.control_rate_hz).round() as u64;
    let mut engine = Engine::new(s.clone(), 0, Some(mode));
    let mut op = ScriptedOperator::new(mode, &s.control.operator, &s).ideal();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let vis = VisibilityConfig::default();
    let every = (s.sim.control_rate_hz / s.control.operator.command_rate_hz).round() as u64;
    let mut cmd = OperatorCommand::zero(0.0);
    for tick in 0..ticks {
        if tick % every == 0 {
            cmd = operator_policy(&mut op, &apply_visibility(&engine.snapshot(), mode, &vis), &mut rng);
        }
        engine.control_tick(&cmd).map_err(|e| e.to_string())?;
        cmd.strap_trigger = false;
    }
    let log = engine.log();
    ensure(log.contact().is_some(), || "no contact".into())?;
    let loading: Vec<f64> = log
        .ticks
        .iter()
        .filter(|r| r.phase == PhaseId::Loading)
        .map(|r| r.world.casualty.head_vel.abs())
        .collect();
    ensure(loading.len() > 500, || format!("loading lasted {} ticks", loading.len()))?;
    let worst = loading.iter().copied().fold(0.0, f64::max);
    ensure(worst <= 1e-9, || format!("max |head vel| {worst:e} m/s"))?;
    Ok(format!("{} loading ticks over 30 s, max |head vel| {worst:e} m/s", loading.len()))
}

// 4 -------------------------------------------------------------------------

const V_STEP: f64 = 0.1;
const STEP_HORIZON: f64 = 3.0;

fn library_step(s: &Scenario) -> Vec<f64> {
    let dt = s.sim.dt;
    let period = s.control_dt();
    let window = s.control.sync.speed_window as usize;
    let mut base_enc = EncoderModel::from_config(&s.vehicle.base_encoder);
    let mut belt_enc = EncoderModel::from_config(&s.vehicle.belt_encoder);
    let mut base_ws = WindowedSpeed::new(window);
    let mut belt_ws = WindowedSpeed::new(window);
    let mut ctl = SyncControllerState::new(&s.control.sync, &s.vehicle);
    let mut motor = BeltMotorModel::new(&s.vehicle.belt, 0.0);
    let ticks = (STEP_HORIZON * s.sim.control_rate_hz).round() as usize;
    let mut out = Vec::with_capacity(ticks);
    for _ in 0..ticks {
        let vb = base_ws.push(base_enc.take_window(), base_enc.count_length(), period);
        let vl = belt_ws.push(belt_enc.take_window(), belt_enc.count_length(), period);
        let (next, duty) = sync_control(&ctl, vb, vl, period);
        ctl = next;
        for _ in 0..s.steps_per_control() {
            motor = belt_motor_step(&motor, duty, dt).0;
            base_enc.accumulate(V_STEP, dt);
            belt_enc.accumulate(motor.v_belt, dt);
        }
        out.push(V_STEP + motor.v_belt);
    }
    out
}

/// The same quantized PI loop written out by hand and integrated at `dt`.
fn oracle_step(s: &Scenario, dt: f64) -> Vec<f64> {
    let period = 1.0 / s.sim.control_rate_hz;
    let steps = (period / dt).round() as usize;
    let (g, tau) = (s.vehicle.belt.gain, s.vehicle.belt.tau);
    let sync = &s.control.sync;
    let quantum = |e: &EncoderConfig| 2.0 * std::f64::consts::PI * e.radius / e.counts_per_rev as f64;
    let (qb, ql) = (quantum(&s.vehicle.base_encoder), quantum(&s.vehicle.belt_encoder));
    let (mut xb, mut xl, mut v_belt, mut integral) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut cb_prev, mut cl_prev) = (0i64, 0i64);
    let (mut hist_b, mut hist_l) = (Vec::new(), Vec::new());
    let ticks = (STEP_HORIZON * s.sim.control_rate_hz).round() as usize;
    let mut out = Vec::with_capacity(ticks);
    for _ in 0..ticks {
        let cb = (xb / qb).floor() as i64;
        let cl = (xl / ql).floor() as i64;
        hist_b.push(cb - cb_prev);
        hist_l.push(cl - cl_prev);
        (cb_prev, cl_prev) = (cb, cl);
        let n = hist_b.len().min(sync.speed_window as usize);
        let avg = |h: &[i64], q: f64| h[h.len() - n..].iter().sum::<i64>() as f64 * q / (n as f64 * period);
        let sp = -avg(&hist_b, qb);
        let e = sp - avg(&hist_l, ql);
        let cand = (integral + e * period).clamp(-sync.integral_limit, sync.integral_limit);
        let raw = sp / g + sync.kp * e + sync.ki * cand;
        if !(raw.abs() > 1.0 && raw.signum() == e.signum()) {
            integral = cand;
        }
        let duty = (sp / g + sync.kp * e + sync.ki * integral).clamp(-1.0, 1.0);
        for _ in 0..steps {
            v_belt += (g * duty - v_belt) / tau * dt;
            xb += V_STEP * dt;
            xl += v_belt * dt;
        }
        out.push(V_STEP + v_belt);
    }
    out
}

fn sync_step() -> Outcome {
    let s = Scenario::standard();
    let lib = library_step(&s);
    let settle = s.sim.control_rate_hz.round() as usize;
    let worst_after = lib[settle..].iter().fold(0.0f64, |m, e| m.max(e.abs()));
    ensure(worst_after < 0.005, || format!("|e| after 1 s reaches {worst_after}"))?;
    let fine = oracle_step(&s, 1e-5);
    let dev = lib.iter().zip(&fine).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(dev <= 0.02 * V_STEP, || format!("deviation from dt=1e-5 oracle {dev}"))?;
    Ok(format!(
        "|e| after 1 s <= {worst_after:.5} m/s; max deviation from fine-step oracle {:.3}% of step",
        dev / V_STEP * 100.0
    ))
}

// 5 -------------------------------------------------------------------------

fn pulse_errors(amp: f64, t0_ticks: u32, dur_ticks: u32) -> Result<(), String> {
    let cfg = Scenario::standard().safety;
    let (res, w) = (cfg.imu.resolution, cfg.window);
    let mut imu = ImuModel::ideal(100.0, res);
    let log: Vec<ImuSample> = (0..=t0_ticks + 300)
        .map(|k| {
            let on = k > t0_ticks && k <= t0_ticks + dur_ticks;
            imu_sample(&mut imu, if on { amp } else { 0.0 }, f64::from(k) / 100.0).unwrap()
        })
        .collect();
    let contact = ContactEvent {
        t_contact: f64::from(t0_ticks) / 100.0,
        relative_speed: 0.0,
    };
    let r = extract_metrics(&log, Some(&contact), &cfg).map_err(|e| e.to_string())?.report;
    let d = f64::from(dur_ticks) / 100.0;
    let v = amp.abs() * d;
    let x = amp.abs() * (d * d / 2.0 + d * (w - d));
    let (v_tol, x_tol) = (0.01 * v + res * w, 0.01 * x + res * w * w / 2.0);
    ensure((r.v_max_contact - v).abs() <= v_tol, || {
        format!("pulse {amp}x{dur_ticks}: v {} vs {v}", r.v_max_contact)
    })?;
    ensure((r.head_displacement - x).abs() <= x_tol, || {
        format!("pulse {amp}x{dur_ticks}: x {} vs {x}", r.head_displacement)
    })
}

/// Quantile at `num/4` in quarter units on integer data, by rank.
fn quarter_quantile(sorted: &[i64], num: i64) -> i64 {
    let n = sorted.len() as i64;
    let rank4 = (num * (n + 1)).clamp(4, 4 * n);
    let lo = (rank4 / 4) as usize;
    let frac4 = rank4 % 4;
    if frac4 == 0 {
        4 * sorted[lo - 1]
    } else {
        4 * sorted[lo - 1] + frac4 * (sorted[lo] - sorted[lo - 1])
    }
}

fn force_report(f: f64) -> SafetyReport {
    SafetyReport {
        a_max: 0.0,
        v_max_contact: 0.0,
        head_displacement: 0.0,
        f_max: f,
        t_contact: 0.0,
        verdicts: Vec::new(),
    }
}

fn metric_extraction() -> Outcome {
    let mut props = runner(256);
    let pulses = (prop_oneof![-5.0f64..-0.2, 0.2f64..5.0], 50u32..400, 20u32..150);
    props
        .run(&pulses, |(amp, t0, dur)| {
            pulse_errors(amp, t0, dur).map_err(TestCaseError::fail)
        })
        .map_err(|e| format!("pulses: {e}"))?;

    let mut props = runner(100);
    let sets = proptest::collection::vec(-500i64..500, 1..=100);
    props
        .run(&sets, |values| {
            let reports: Vec<SafetyReport> = values.iter().map(|&v| force_report(v as f64)).collect();
            let tagged: Vec<_> = reports.iter().map(|r| (PerceptionMode::Direct, r)).collect();
            let s = aggregate_reports(&tagged, &[PerceptionMode::Direct]).unwrap().remove(0);
            let mut sorted = values.clone();
            sorted.sort_unstable();
            let (q1, med, q3) = (
                quarter_quantile(&sorted, 1),
                quarter_quantile(&sorted, 2),
                quarter_quantile(&sorted, 3),
            );
            prop_assert_eq!(s.n, values.len());
            prop_assert_eq!(s.min, sorted[0] as f64);
            prop_assert_eq!(s.max, *sorted.last().unwrap() as f64);
            prop_assert_eq!((s.q1, s.median, s.q3), (q1 as f64 / 4.0, med as f64 / 4.0, q3 as f64 / 4.0));
            let (lo8, hi8) = (2 * q1 - 3 * (q3 - q1), 2 * q3 + 3 * (q3 - q1));
            let inside: Vec<i64> = sorted.iter().copied().filter(|v| 8 * v >= lo8 && 8 * v <= hi8).collect();
            let outside: Vec<f64> = sorted
                .iter()
                .filter(|&&v| 8 * v < lo8 || 8 * v > hi8)
                .map(|&v| v as f64)
                .collect();
            prop_assert_eq!(s.whisker_low, inside[0] as f64);
            prop_assert_eq!(s.whisker_high, *inside.last().unwrap() as f64);
            prop_assert_eq!(s.outliers, outside);
            Ok(())
        })
        .map_err(|e| format!("quantiles: {e}"))?;
    Ok("256 rectangular pulses within 1% + one quantum; quantiles exact on 100 random sets".into())
}

// 6 -------------------------------------------------------------------------

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn batch_protocol() -> Outcome {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.json");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let started = Instant::now();
        let o = Command::new(BIN)
            .args(["batch", "--scenario"])
            .arg(&scenario)
            .args(["--trials-per-mode", "30", "--modes", "all", "--base-seed", "2024", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        let elapsed = started.elapsed();
        ensure(o.status.success(), || {
            format!("batch exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr))
        })?;
        ensure(elapsed < Duration::from_secs(300), || format!("batch took {elapsed:.1?}"))?;
        runs.push((out, elapsed));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(runs[0].0.join("manifest.json")).unwrap())
        .map_err(|e| e.to_string())?;
    ensure(manifest.trials.len() == 90, || format!("{} manifest entries", manifest.trials.len()))?;
    for mode in PerceptionMode::ALL {
        let n = manifest.trials.iter().filter(|t| t.mode == mode).count();
        ensure(n == 30, || format!("{n} {mode} trials"))?;
    }
    let (a, b) = (tree(&runs[0].0), tree(&runs[1].0));
    ensure(a.keys().eq(b.keys()), || "re-run wrote a different set of files".into())?;
    for (k, v) in &a {
        ensure(&b[k] == v, || format!("{k} differs between runs"))?;
    }
    let reports = a.keys().filter(|k| k.ends_with(".report.json")).count();
    ensure(reports == 90, || format!("{reports} report files"))?;
    Ok(format!(
        "90 entries; {} files byte-identical on re-run; {:.1?} and {:.1?}",
        a.len(),
        runs[0].1,
        runs[1].1
    ))
}

// 7 -------------------------------------------------------------------------

fn mode_ordering() -> Outcome {
    let s = Scenario::standard();
    let mut medians = Vec::new();
    for mode in [PerceptionMode::Direct, PerceptionMode::Immersive, PerceptionMode::Conventional] {
        let mut f = (0..30).map(|seed| trial(&s, mode, seed).map(|r| r.f_max)).collect::<Result<Vec<_>, _>>()?;
        f.sort_by(f64::total_cmp);
        medians.push((f[14] + f[15]) / 2.0);
    }
    let [d, i, c] = [medians[0], medians[1], medians[2]];
    ensure(d <= i && i <= c, || format!("medians direct {d:.3}, immersive {i:.3}, conventional {c:.3}"))?;
    ensure(i < 28.0, || format!("immersive median {i:.3} N"))?;
    Ok(format!("median f_max direct {d:.2} <= immersive {i:.2} <= conventional {c:.2} N"))
}

// 8 -------------------------------------------------------------------------

fn row_report(row: [f64; 4]) -> SafetyReport {
    SafetyReport {
        a_max: row[0],
        v_max_contact: row[1],
        head_displacement: row[2],
        f_max: row[3],
        t_contact: 0.0,
        verdicts: Vec::new(),
    }
}

fn thresholds() -> Outcome {
    let table = ThresholdTable::placeholder();
    ensure(table.entries.iter().all(|e| e.source == "placeholder"), || "source tag".into())?;
    let covered: Vec<Metric> = table.entries.iter().map(|e| e.metric).collect();
    ensure(METRICS.iter().all(|m| covered.contains(m)), || "placeholder misses a metric".into())?;
    for (name, row) in [("smooth", SMOOTH_ROW), ("rough", ROUGH_ROW)] {
        let v = verdicts(&row_report(row), &table);
        ensure(v.iter().all(|v| v.pass), || format!("published {name} row fails: {v:?}"))?;
    }
    for (name, s) in [("smooth", Scenario::standard()), ("rough", Scenario::rough())] {
        let r = trial(&s, PerceptionMode::Direct, 0)?;
        ensure(verdicts(&r, &table).iter().all(|v| v.pass), || format!("simulated {name} trial fails"))?;
    }

    let metric = prop::sample::select(METRICS.to_vec());
    let cases = (
        (0.0f64..20.0, 0.0f64..1.0, 0.0f64..0.3),
        proptest::collection::vec((metric, 0.001f64..200.0), 1..8),
        any::<prop::sample::Index>(),
        1.0f64..10.0,
    );
    let est = Scenario::standard().safety.estimator;
    let mut props = runner(512);
    props
        .run(&cases, |((a, v, x), entries, which, factor)| {
            let report = SafetyReport {
                a_max: a,
                v_max_contact: v,
                head_displacement: x,
                f_max: estimate_force(a, est.m_head, est.f_static).unwrap(),
                t_contact: 1.0,
                verdicts: Vec::new(),
            };
            let table = ThresholdTable {
                entries: entries
                    .iter()
                    .enumerate()
                    .map(|(i, &(metric, limit))| Threshold {
                        name: format!("t{i}"),
                        metric,
                        limit,
                        source: "test".into(),
                    })
                    .collect(),
            };
            let mut raised = table.clone();
            let i = which.index(raised.entries.len());
            raised.entries[i].limit *= factor;
            for (b, r) in verdicts(&report, &table).iter().zip(verdicts(&report, &raised)) {
                prop_assert!(!b.pass || r.pass, "{} flipped to fail", b.name);
            }
            Ok(())
        })
        .map_err(|e| format!("monotonicity: {e}"))?;
    Ok("both published rows and both simulated trials pass; monotone over 512 random tables".into())
}

// 9 -------------------------------------------------------------------------

async fn closure() -> Outcome {
    let scenario = Scenario::standard();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = SessionConfig::new(scenario.clone(), PerceptionMode::Immersive, 21);
    cfg.record_dir = Some(dir.path().to_path_buf());
    let serve = |cfg: SessionConfig| async move {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        Server::live(cfg, None, listener).await.unwrap()
    };

    let mut server = serve(cfg.clone()).await;
    let operator = ScriptedClientConfig {
        scenario: scenario.clone(),
        mode: PerceptionMode::Immersive,
        seed: 21,
        ideal: false,
        leave_at: None,
    };
    let live = run_scripted(&server.session_url(), &operator).await.map_err(|e| e.to_string())?;
    let first = server.session_outcome().await.ok_or("no session outcome")?;
    let _ = server.shutdown().await;
    ensure(live.bye == Some(ByeReason::Completed), || format!("live session ended {:?}", live.bye))?;
    let rec = first.record;
    let report = rec.report.clone().ok_or("no report recorded")?;
    let again = rec.resimulate(&scenario).map_err(|e| e.to_string())?;
    ensure(again == first.log, || "offline re-simulation differs from the live log".into())?;

    cfg.record_dir = None;
    let mut server = serve(cfg).await;
    let played = client::replay_record(&server.session_url(), &rec).await.map_err(|e| e.to_string())?;
    let second = server.session_outcome().await.ok_or("no replay outcome")?;
    let _ = server.shutdown().await;
    ensure(second.record.status == SessionStatus::Completed, || "replay did not complete".into())?;
    ensure(played.report() == second.record.report.as_ref(), || "client and server reports differ".into())?;
    ensure(second.record.commands.len() == rec.commands.len(), || "command count differs".into())?;
    let mut shifted = 0;
    for (a, b) in rec.commands.iter().zip(&second.record.commands) {
        let d = b.applied_tick.abs_diff(a.applied_tick);
        ensure(a.seq == b.seq && a.command == b.command && d <= 1, || {
            format!("command {} applied {d} ticks apart", a.seq)
        })?;
        shifted += usize::from(d != 0);
    }
    let replayed = second.record.report.clone().ok_or("replay has no report")?;
    let check = second.record.resimulate(&scenario).map_err(|e| e.to_string())?;
    let check = check.extract_metrics(&scenario.safety).map_err(|e| e.to_string())?.report;
    ensure(check == replayed, || "replayed report is not reproduced by its command schedule".into())?;
    if shifted == 0 {
        ensure(replayed == report, || "aligned replay changed the report".into())?;
    }
    let pass = |r: &SafetyReport| r.verdicts.iter().map(|v| v.pass).collect::<Vec<_>>();
    ensure(pass(&replayed) == pass(&report), || "verdicts differ".into())?;
    Ok(format!(
        "{} commands within one tick ({shifted} shifted); f_max {:.3} -> {:.3} N",
        rec.commands.len(),
        report.f_max,
        replayed.f_max
    ))
}

fn record_replay() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    let live = rt.block_on(closure())?;
    let mut props = runner(512);
    props
        .run(&strategies::message(), |m| {
            prop_assert_eq!(decode(&encode(&m)), Ok(m));
            Ok(())
        })
        .map_err(|e| format!("round trip: {e}"))?;
    Ok(format!("{live}; 512 messages round-trip"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("force estimator", force_estimator),
        ("smooth vs rough ordering", smooth_vs_rough),
        ("sync neutrality", sync_neutrality),
        ("sync controller step", sync_step),
        ("metric extraction oracle", metric_extraction),
        ("batch protocol shape", batch_protocol),
        ("mode ordering of median force", mode_ordering),
        ("threshold verdicts", thresholds),
        ("record/replay closure", record_replay),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
