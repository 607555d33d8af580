use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;
use tokio::net::TcpListener;

use resqsim_core::harness::batch::{self, BatchConfig, BatchError, BatchStats, TrialReport};
use resqsim_core::harness::log::{LogError, TrialLog};
use resqsim_core::harness::replay::replay_paced;
use resqsim_core::harness::trial::{run_trial, TrialConfig, TrialStatus};
use resqsim_core::harness::{load_batch, run_batch};
use resqsim_core::{ConfigError, PerceptionMode, Scenario};
use resqsim_teleop::server::{ReplayConfig, Server};
use resqsim_teleop::session::{SessionConfig, DEFAULT_SNAPSHOT_RATE_HZ};
use resqsim_teleop::SessionStatus;

use crate::{Command, Format, ScenarioArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Trial(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Trial(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<BatchError> for CliError {
    fn from(e: BatchError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<LogError> for CliError {
    fn from(e: LogError) -> Self {
        CliError::Io(e.to_string())
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            scenario,
            mode,
            seed,
            out,
            ideal,
        } => run(&scenario, mode, seed, &out, ideal),
        Command::Batch {
            scenario,
            trials_per_mode,
            modes,
            base_seed,
            out,
            serial,
        } => batch_cmd(&scenario, trials_per_mode, &modes, base_seed, &out, serial),
        Command::Replay {
            log,
            speed,
            serve,
            port,
            host,
            scenario,
            static_dir,
        } => replay(&log, speed, serve, &host, port, scenario.as_deref(), static_dir),
        Command::Report { manifest, format } => report(&manifest, format),
        Command::Serve {
            scenario,
            mode,
            port,
            host,
            record,
            seed,
            time_scale,
            command_latency,
            static_dir,
        } => {
            let sc = load_scenario(&scenario)?;
            if !(time_scale.is_finite() && time_scale > 0.0) {
                return Err(CliError::Config(format!("--time-scale must be positive, got {time_scale}")));
            }
            if !(command_latency.is_finite() && command_latency >= 0.0) {
                return Err(CliError::Config(format!(
                    "--command-latency must be non-negative, got {command_latency}"
                )));
            }
            let mut cfg = SessionConfig::new(sc, mode, seed);
            cfg.time_scale = time_scale;
            cfg.command_latency = command_latency;
            cfg.record_dir = record;
            serve(cfg, &host, port, static_dir)
        }
    }
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let sc = Scenario::load_with_overrides(&args.scenario, &args.overrides)?;
    log::info!("scenario {} ({})", sc.name, sc.config_hash());
    Ok(sc)
}

fn write_scenario(sc: &Scenario, dir: &Path) -> Result<(), CliError> {
    let path = dir.join("scenario.json");
    fs::write(&path, sc.to_json_pretty()).map_err(io_at(&path))
}

fn run(args: &ScenarioArgs, mode: PerceptionMode, seed: u64, out: &Path, ideal: bool) -> Result<(), CliError> {
    let scenario = load_scenario(args)?;
    fs::create_dir_all(out).map_err(io_at(out))?;
    write_scenario(&scenario, out)?;
    let id = format!("{mode}-seed{seed}");
    let cfg = TrialConfig {
        scenario: scenario.clone(),
        mode,
        seed,
        ideal_operator: ideal,
    };
    let (log, status, message, report, warnings) = match run_trial(&cfg) {
        Ok(r) => (r.log, TrialStatus::Ok, None, Some(r.report), r.warnings),
        Err(f) => (*f.log, f.status, Some(f.message), None, Vec::new()),
    };
    log.write(&out.join(format!("{id}.jsonl")), &out.join(format!("{id}.imu.csv")))?;
    let tr = TrialReport {
        trial_id: id.clone(),
        mode,
        seed,
        config_hash: scenario.config_hash(),
        status,
        message: message.clone(),
        report: report.clone(),
        warnings,
    };
    batch::write_json(&out.join(format!("{id}.report.json")), &tr)?;

    for w in &tr.warnings {
        log::warn!("{id}: {w}");
    }
    match report {
        Some(r) => {
            println!(
                "{id}: a_max {:.3} m/s^2, v_contact {:.4} m/s, x_head {:.4} m, f_max {:.2} N",
                r.a_max, r.v_max_contact, r.head_displacement, r.f_max
            );
            for v in &r.verdicts {
                println!(
                    "  {:<18} {:>10.4} / {:<8} {}",
                    v.name,
                    v.value,
                    v.limit,
                    if v.pass { "pass" } else { "FAIL" }
                );
            }
            Ok(())
        }
        None => Err(CliError::Trial(format!(
            "{id}: {}: {}",
            status.as_str(),
            message.unwrap_or_default()
        ))),
    }
}

fn parse_modes(s: &str) -> Result<Vec<PerceptionMode>, CliError> {
    if s.trim() == "all" {
        return Ok(PerceptionMode::ALL.to_vec());
    }
    let mut modes = Vec::new();
    for part in s.split(',') {
        let m: PerceptionMode = part.trim().parse()?;
        if modes.contains(&m) {
            return Err(CliError::Config(format!("mode {m} listed twice")));
        }
        modes.push(m);
    }
    Ok(modes)
}

fn batch_cmd(
    args: &ScenarioArgs,
    trials_per_mode: u32,
    modes: &str,
    base_seed: u64,
    out: &Path,
    serial: bool,
) -> Result<(), CliError> {
    let scenario = load_scenario(args)?;
    let modes = parse_modes(modes)?;
    if trials_per_mode == 0 {
        return Err(CliError::Config("--trials-per-mode must be at least 1".into()));
    }
    fs::create_dir_all(out).map_err(io_at(out))?;
    write_scenario(&scenario, out)?;
    let result = run_batch(&BatchConfig {
        scenario,
        modes: modes.clone(),
        trials_per_mode,
        base_seed,
        out_dir: out.to_path_buf(),
        parallel: !serial,
    })?;
    println!(
        "{} trials, {} failed; manifest {}",
        result.manifest.trials.len(),
        result.failed(),
        out.join(batch::MANIFEST_FILE).display()
    );
    for (mode, n) in &result.stats.completed {
        let f = result
            .stats
            .group(resqsim_core::safety::Metric::Force, *mode)
            .map(|d| format!("{:.2}", d.median))
            .unwrap_or_else(|| "-".into());
        println!("  {:<13} ok {n:>3}  median f_max {f} N", mode.as_str());
    }
    if result.failed() > 0 {
        return Err(CliError::Trial(format!("{} trials did not complete", result.failed())));
    }
    Ok(())
}

fn imu_sidecar(log: &Path) -> PathBuf {
    let name = log.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let stem = name.strip_suffix(".jsonl").unwrap_or(name);
    log.with_file_name(format!("{stem}.imu.csv"))
}

/// The scenario a log was recorded with: `explicit`, else a `scenario.json`
/// beside the log or one level up, else a built-in with the same hash.
fn scenario_for_log(log: &TrialLog, log_path: &Path, explicit: Option<&Path>) -> Result<Scenario, CliError> {
    let hash = &log.header.config_hash;
    let check = |sc: Scenario, from: &Path| {
        if &sc.config_hash() == hash {
            Ok(sc)
        } else {
            Err(CliError::Config(format!(
                "{} does not match the log (config hash {} vs {hash})",
                from.display(),
                sc.config_hash()
            )))
        }
    };
    if let Some(p) = explicit {
        return check(Scenario::load(p)?, p);
    }
    let dir = log_path.parent().unwrap_or(Path::new("."));
    for d in [Some(dir), dir.parent()].into_iter().flatten() {
        let p = d.join("scenario.json");
        if p.is_file() {
            if let Ok(sc) = Scenario::load(&p) {
                if &sc.config_hash() == hash {
                    return Ok(sc);
                }
            }
        }
    }
    [Scenario::standard(), Scenario::rough()]
        .into_iter()
        .find(|s| &s.config_hash() == hash)
        .ok_or_else(|| {
            CliError::Config(format!(
                "no scenario with config hash {hash} found; pass --scenario"
            ))
        })
}

fn replay(
    log_path: &Path,
    speed: f64,
    serve_it: bool,
    host: &str,
    port: u16,
    scenario: Option<&Path>,
    static_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    if !(speed.is_finite() && speed > 0.0) {
        return Err(CliError::Config(format!("--speed must be positive, got {speed}")));
    }
    let imu = imu_sidecar(log_path);
    let loaded = TrialLog::read(log_path, imu.is_file().then_some(imu.as_path()))?;
    if loaded.truncated {
        log::warn!("{}: last line was incomplete and has been dropped", log_path.display());
    }
    let log = loaded.log;

    if !serve_it {
        let stdout = io::stdout();
        let mut out = stdout.lock();
        let mut err = None;
        replay_paced(&log, speed, |rec| {
            let line = serde_json::json!({
                "tick": rec.tick,
                "t": rec.t,
                "phase": rec.phase,
                "world": rec.world,
            });
            match writeln!(out, "{line}").and_then(|_| out.flush()) {
                Ok(()) => true,
                Err(e) => {
                    err = Some(e);
                    false
                }
            }
        });
        return match err {
            Some(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            Some(e) => Err(CliError::Io(format!("stdout: {e}"))),
            None => Ok(()),
        };
    }

    let scenario = scenario_for_log(&log, log_path, scenario)?;
    let mode = log.header.mode.unwrap_or(PerceptionMode::Direct);
    let cfg = ReplayConfig {
        log,
        scenario,
        mode,
        speed,
        snapshot_rate_hz: DEFAULT_SNAPSHOT_RATE_HZ,
    };
    runtime()?.block_on(async move {
        let listener = bind(host, port).await?;
        let server = Server::replay(cfg, static_dir, listener).await.map_err(|e| CliError::Io(e.to_string()))?;
        println!("replaying on http://{} (session {})", server.local_addr(), server.session_url());
        let _ = tokio::signal::ctrl_c().await;
        server.shutdown().await.map_err(|e| CliError::Io(e.to_string()))
    })
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(format!("stdout: {e}"))
}

fn report(manifest_path: &Path, format: Format) -> Result<(), CliError> {
    let (manifest, trials) = load_batch(manifest_path)?;
    let ok: Vec<_> = trials
        .iter()
        .filter_map(|t| t.report.clone().map(|r| (t.mode, r)))
        .collect();
    let stats = BatchStats::from_reports(&manifest.config_hash, &manifest.modes, &ok);
    match format {
        Format::Json => {
            let text = serde_json::to_string_pretty(&stats).map_err(|e| CliError::Io(e.to_string()))?;
            println!("{text}");
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            w.write_record([
                "metric",
                "mode",
                "n",
                "min",
                "q1",
                "median",
                "q3",
                "max",
                "whisker_low",
                "whisker_high",
                "outliers",
            ])
            .map_err(csv_err)?;
            for m in &stats.metrics {
                let metric = serde_json::to_value(m.metric)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default();
                for g in &m.groups {
                    let f = |x: f64| format!("{x:.6}");
                    let outliers = g.outliers.iter().map(|&x| f(x)).collect::<Vec<_>>().join(";");
                    w.write_record([
                        metric.clone(),
                        g.mode.map(|m| m.to_string()).unwrap_or_default(),
                        g.n.to_string(),
                        f(g.min),
                        f(g.q1),
                        f(g.median),
                        f(g.q3),
                        f(g.max),
                        f(g.whisker_low),
                        f(g.whisker_high),
                        outliers,
                    ])
                    .map_err(csv_err)?;
                }
            }
            w.flush().map_err(|e| CliError::Io(format!("stdout: {e}")))?;
        }
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(format!("runtime: {e}")))
}

async fn bind(host: &str, port: u16) -> Result<TcpListener, CliError> {
    TcpListener::bind((host, port))
        .await
        .map_err(|e| CliError::Io(format!("bind {host}:{port}: {e}")))
}

fn serve(cfg: SessionConfig, host: &str, port: u16, static_dir: Option<PathBuf>) -> Result<(), CliError> {
    runtime()?.block_on(async move {
        let listener = bind(host, port).await?;
        let mut server = Server::live(cfg, static_dir, listener)
            .await
            .map_err(|e| CliError::Io(e.to_string()))?;
        println!("serving on http://{} (session {})", server.local_addr(), server.session_url());
        let outcome = tokio::select! {
            o = server.session_outcome() => o,
            _ = tokio::signal::ctrl_c() => None,
        };
        server.shutdown().await.map_err(|e| CliError::Io(e.to_string()))?;
        let Some(o) = outcome else {
            println!("stopped");
            return Ok(());
        };
        let rec = &o.record;
        println!("session {} {}", rec.session_id, rec.status.as_str());
        if let Some(r) = &rec.report {
            println!(
                "  a_max {:.3} m/s^2, v_contact {:.4} m/s, x_head {:.4} m, f_max {:.2} N",
                r.a_max, r.v_max_contact, r.head_displacement, r.f_max
            );
        }
        if let Some(p) = &o.record_path {
            println!("  record {}", p.display());
        }
        if let Some(e) = o.write_error {
            return Err(CliError::Io(format!("writing session record: {e}")));
        }
        if rec.status == SessionStatus::Aborted {
            return Err(CliError::Trial(format!(
                "session aborted: {}",
                rec.message.clone().unwrap_or_default()
            )));
        }
        Ok(())
    })
}
