//! `resqsim`: run trials and batches, replay logs, summarise batches, and
//! serve live teleoperation sessions.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use resqsim_core::PerceptionMode;

#[derive(Debug, Parser)]
#[command(name = "resqsim", version, about = "Casualty-extraction robot simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override a scenario field before validation, e.g.
    /// `--set casualty.mu_k=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scripted trial.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_parser = parse_mode)]
        mode: PerceptionMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Drop operator delay and noise.
        #[arg(long)]
        ideal: bool,
    },
    /// Run `trials-per-mode` trials for each mode.
    Batch {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 30)]
        trials_per_mode: u32,
        /// `all` or a comma-separated list of modes.
        #[arg(long, default_value = "all")]
        modes: String,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Run trials one after another instead of in parallel.
        #[arg(long)]
        serial: bool,
    },
    /// Stream a trial log as world states, or serve it to the UI.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Playback speed factor.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Serve the replay over the session WebSocket instead of printing.
        #[arg(long)]
        serve: bool,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Scenario the log was recorded with. Looked up next to the log
        /// when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Directory with the operator UI.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Summarise a batch from its manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Serve a live teleoperation session.
    Serve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_parser = parse_mode)]
        mode: PerceptionMode,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Write the session record and trial log here.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
        /// Artificial delay added to operator commands, s.
        #[arg(long, default_value_t = 0.0)]
        command_latency: f64,
        /// Directory with the operator UI.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn parse_mode(s: &str) -> Result<PerceptionMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RESQSIM_LOG_LEVEL", "warn"))
        .format_timestamp_millis()
        .init();
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("resqsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
