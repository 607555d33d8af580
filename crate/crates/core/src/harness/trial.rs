//! Single scripted trials.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PerceptionMode, Scenario};
use crate::control::{operator_policy, ControlError, OperatorCommand, ScriptedOperator};
use crate::safety::{SafetyError, SafetyReport};
use crate::sim::SimError;
use crate::snapshot::{apply_visibility, StateSnapshot, VisibilityConfig};

use super::engine::{Engine, EngineError};
use super::log::TrialLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    PrematureContact,
    NoContact,
    Timeout,
    Diverged,
    MetricsFailed,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::PrematureContact => "premature_contact",
            TrialStatus::NoContact => "no_contact",
            TrialStatus::Timeout => "timeout",
            TrialStatus::Diverged => "diverged",
            TrialStatus::MetricsFailed => "metrics_failed",
        }
    }
}

/// A trial that ended without a usable report. The partial log is kept.
#[derive(Debug, Error)]
#[error("trial aborted ({}): {message}", .status.as_str())]
pub struct TrialFault {
    pub status: TrialStatus,
    pub message: String,
    pub log: Box<TrialLog>,
}

#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub scenario: Scenario,
    pub mode: PerceptionMode,
    pub seed: u64,
    /// Drop operator delay and noise.
    pub ideal_operator: bool,
}

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub log: TrialLog,
    pub report: SafetyReport,
    pub warnings: Vec<String>,
}

/// Runs one trial with the scripted operator for `cfg.mode`.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialRun, TrialFault> {
    let sc = &cfg.scenario;
    let mut engine = Engine::new(sc.clone(), cfg.seed, Some(cfg.mode));
    let mut op = ScriptedOperator::new(cfg.mode, &sc.control.operator, sc);
    if cfg.ideal_operator {
        op = op.ideal();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let rate = sc.sim.control_rate_hz;
    let op_every = ((rate / sc.control.operator.command_rate_hz).round() as u64).max(1);
    let delay_ticks = (op.reaction_delay * rate).round() as usize;
    let vis = VisibilityConfig::default();
    let mut history: VecDeque<StateSnapshot> = VecDeque::with_capacity(delay_ticks + 1);
    history.push_back(engine.snapshot());
    let mut cmd = OperatorCommand::zero(0.0);

    let fault = |engine: Engine, status: TrialStatus, message: String| TrialFault {
        status,
        message,
        log: Box::new(engine.into_log()),
    };

    while !engine.finished() {
        let tick = engine.control_tick_index();
        if tick.is_multiple_of(op_every) {
            let perceived = apply_visibility(&history[0], cfg.mode, &vis);
            cmd = operator_policy(&mut op, &perceived, &mut rng);
        }
        if let Err(e) = engine.control_tick(&cmd) {
            let status = match &e {
                EngineError::Control(ControlError::PrematureContact { .. }) => {
                    TrialStatus::PrematureContact
                }
                EngineError::Sim(SimError::Diverged { .. }) => TrialStatus::Diverged,
                _ => TrialStatus::MetricsFailed,
            };
            return Err(fault(engine, status, e.to_string()));
        }
        cmd.strap_trigger = false;

        history.push_back(engine.snapshot());
        if history.len() > delay_ticks + 1 {
            history.pop_front();
        }

        let t = engine.world().time;
        if engine.world().contact.is_none() && t >= sc.sim.contact_budget {
            let msg = format!("no contact within {} s", sc.sim.contact_budget);
            return Err(fault(engine, TrialStatus::NoContact, msg));
        }
        if t >= sc.sim.trial_budget && !engine.finished() {
            let msg = format!(
                "trial not finished within {} s (phase {})",
                sc.sim.trial_budget,
                engine.world().phase.as_str()
            );
            return Err(fault(engine, TrialStatus::Timeout, msg));
        }
    }

    match engine.metrics() {
        Ok(out) => {
            let mut warnings: Vec<String> = engine.log().warnings().map(String::from).collect();
            warnings.extend(out.warnings);
            for w in &warnings {
                log::warn!("seed {} ({}): {w}", cfg.seed, cfg.mode);
            }
            Ok(TrialRun {
                log: engine.into_log(),
                report: out.report,
                warnings,
            })
        }
        Err(e @ SafetyError::NoContact) => {
            Err(fault(engine, TrialStatus::NoContact, e.to_string()))
        }
        Err(e) => Err(fault(engine, TrialStatus::MetricsFailed, e.to_string())),
    }
}
