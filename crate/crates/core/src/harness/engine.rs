//! The control-rate simulation loop shared by batch trials and live sessions.

use thiserror::Error;

use crate::config::{PerceptionMode, Scenario, SyncMode};
use crate::control::{
    phase_update, sync_control, ControlError, OperatorCommand, PhaseId, SyncControllerState,
    WindowedSpeed,
};
use crate::safety::{
    estimate_force, imu_sample, ImuModel, ImuSample, MetricsOutcome, SafetyError,
};
use crate::sim::{step, ActuationInput, ContactEvent, SimError, WorldState};
use crate::snapshot::{StateSnapshot, Telemetry};
use crate::vehicle::{EncoderModel, StrapCommand, StrapState};

use super::log::{EventKind, LogEvent, LogHeader, TickRecord, TrialLog, LOG_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
}

/// What happened during one control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub phase_change: Option<(PhaseId, PhaseId)>,
    pub contact: Option<ContactEvent>,
    pub imu: ImuSample,
}

/// Owns the world and all controller/sensor state; advances one control
/// period per call and records everything into a [`TrialLog`].
#[derive(Debug, Clone)]
pub struct Engine {
    scenario: Scenario,
    world: WorldState,
    sync: SyncControllerState,
    base_encoder: EncoderModel,
    belt_encoder: EncoderModel,
    base_speed: WindowedSpeed,
    belt_speed: WindowedSpeed,
    imu: ImuModel,
    head_vel_at_sample: f64,
    telemetry: Telemetry,
    log: TrialLog,
    control_tick: u64,
}

impl Engine {
    pub fn new(scenario: Scenario, seed: u64, mode: Option<PerceptionMode>) -> Self {
        let world = WorldState::initial(&scenario, seed);
        let window = scenario.control.sync.speed_window as usize;
        let mut imu = ImuModel::new(&scenario.safety.imu, seed);
        let first = imu_sample(&mut imu, 0.0, 0.0).expect("t=0 is on the grid");
        let mut log = TrialLog {
            header: LogHeader {
                schema_version: LOG_SCHEMA_VERSION,
                scenario: scenario.name.clone(),
                config_hash: scenario.config_hash(),
                seed,
                mode,
                dt: scenario.sim.dt,
                control_rate_hz: scenario.sim.control_rate_hz,
            },
            ticks: Vec::new(),
            events: Vec::new(),
            imu: vec![first],
        };
        let c = &scenario.casualty;
        let payload = c.m_head + c.m_upper + c.m_lower;
        if payload > scenario.vehicle.payload_limit {
            log.events.push(LogEvent {
                tick: 0,
                t: 0.0,
                kind: EventKind::Warning(format!(
                    "casualty mass {payload:.1} kg exceeds the {:.0} kg payload limit",
                    scenario.vehicle.payload_limit
                )),
            });
        }
        log.ticks.push(TickRecord {
            tick: 0,
            t: 0.0,
            phase: world.phase,
            command: OperatorCommand::zero(0.0),
            duty: 0.0,
            world: world.clone(),
        });
        Self {
            sync: SyncControllerState::new(&scenario.control.sync, &scenario.vehicle),
            base_encoder: EncoderModel::from_config(&scenario.vehicle.base_encoder),
            belt_encoder: EncoderModel::from_config(&scenario.vehicle.belt_encoder),
            base_speed: WindowedSpeed::new(window),
            belt_speed: WindowedSpeed::new(window),
            imu,
            head_vel_at_sample: 0.0,
            telemetry: Telemetry::default(),
            log,
            control_tick: 0,
            world,
            scenario,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn log(&self) -> &TrialLog {
        &self.log
    }

    pub fn into_log(self) -> TrialLog {
        self.log
    }

    pub fn control_tick_index(&self) -> u64 {
        self.control_tick
    }

    pub fn telemetry(&self) -> Telemetry {
        self.telemetry
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot::from_world(&self.world, &self.scenario, self.telemetry)
    }

    fn event(&mut self, kind: EventKind) {
        self.log.events.push(LogEvent {
            tick: self.control_tick,
            t: self.world.time,
            kind,
        });
    }

    /// The trial is complete once fastened and the analysis window after
    /// contact is fully recorded.
    pub fn finished(&self) -> bool {
        self.world.phase == PhaseId::Done
            && self
                .world
                .contact
                .is_some_and(|c| self.world.time >= c.t_contact + self.scenario.safety.window)
    }

    pub fn metrics(&self) -> Result<MetricsOutcome, SafetyError> {
        self.log.extract_metrics(&self.scenario.safety)
    }

    /// Applies `command` for one control period.
    pub fn control_tick(&mut self, command: &OperatorCommand) -> Result<TickOutput, EngineError> {
        let sc = self.scenario.clone();
        let cmd = command.clamped(&sc.vehicle);
        let period = sc.control_dt();

        // Belt drive from the encoder windows closed at this tick.
        let base_meas = self.base_speed.push(
            self.base_encoder.take_window(),
            self.base_encoder.count_length(),
            period,
        );
        let belt_meas = self.belt_speed.push(
            self.belt_encoder.take_window(),
            self.belt_encoder.count_length(),
            period,
        );
        let (duty, exact_sync) = match sc.control.sync.mode {
            _ if !cmd.belt_enable => {
                self.sync = SyncControllerState::new(&sc.control.sync, &sc.vehicle);
                (0.0, false)
            }
            SyncMode::Closed => {
                let (next, duty) = sync_control(&self.sync, base_meas, belt_meas, period);
                self.sync = next;
                (duty, false)
            }
            SyncMode::FixedDuty(d) => (d, false),
            SyncMode::Exact => (0.0, true),
        };

        let mut strap = StrapCommand::Hold;
        if cmd.strap_trigger {
            let accepted =
                self.world.phase == PhaseId::Fastening && self.world.robot.strap == StrapState::Open;
            if accepted {
                strap = StrapCommand::Fasten;
            }
            self.event(EventKind::StrapTrigger { accepted });
        }

        let dt = sc.sim.dt;
        let steps = sc.steps_per_control();
        let mut contact = None;
        for i in 0..steps {
            let act = ActuationInput {
                v_cmd: cmd.v_cmd,
                omega_cmd: cmd.omega_cmd,
                belt_duty: duty,
                strap: if i == 0 { strap } else { StrapCommand::Hold },
                exact_sync,
            };
            let out = step(&self.world, &act, &sc, dt)?;
            self.world = out.world;
            self.base_encoder.accumulate(self.world.robot.v_base, dt);
            self.belt_encoder.accumulate(self.world.robot.v_belt, dt);
            for w in out.warnings {
                self.event(EventKind::Warning(w));
            }
            if let Some(ev) = out.contact {
                contact = Some(ev);
                self.event(EventKind::Contact(ev));
            }
        }
        self.control_tick += 1;

        // Head IMU: average acceleration over the sample period.
        let head_vel = self.world.casualty.head_vel;
        let true_acc = (head_vel - self.head_vel_at_sample) / period;
        self.head_vel_at_sample = head_vel;
        let t_sample = self.control_tick as f64 / self.scenario.sim.control_rate_hz;
        let sample = imu_sample(&mut self.imu, true_acc, t_sample)?;
        self.log.imu.push(sample);
        self.telemetry.acc_now = sample.a.abs();
        if self.world.contact.is_some() {
            self.telemetry.a_max = self.telemetry.a_max.max(sample.a.abs());
            let est = &self.scenario.safety.estimator;
            self.telemetry.f_max = estimate_force(self.telemetry.a_max, est.m_head, est.f_static)?;
        }

        let before = self.world.phase;
        let phase = match phase_update(before, &self.world, &sc) {
            Ok(p) => p,
            Err(e) => {
                self.event(EventKind::Aborted(e.to_string()));
                self.record(cmd, duty);
                return Err(e.into());
            }
        };
        let phase_change = (phase != before).then_some((before, phase));
        if let Some((from, to)) = phase_change {
            self.world.phase = to;
            self.event(EventKind::PhaseChange { from, to });
        }
        self.record(cmd, duty);
        Ok(TickOutput {
            phase_change,
            contact,
            imu: sample,
        })
    }

    fn record(&mut self, command: OperatorCommand, duty: f64) {
        self.log.ticks.push(TickRecord {
            tick: self.control_tick,
            t: self.world.time,
            phase: self.world.phase,
            command,
            duty,
            world: self.world.clone(),
        });
    }
}

/// Folds commands received within one control period into the command held
/// for the next tick: continuous fields are latest-wins, strap triggers are
/// never dropped.
pub fn merge_commands<'a>(
    held: &OperatorCommand,
    incoming: impl IntoIterator<Item = &'a OperatorCommand>,
) -> OperatorCommand {
    let mut out = *held;
    out.strap_trigger = false;
    for c in incoming {
        let trigger = out.strap_trigger || c.strap_trigger;
        out = *c;
        out.strap_trigger = trigger;
    }
    out
}

/// Re-simulates a command schedule of `(control tick, command)` pairs, each
/// applied at the start of its tick, until the trial finishes or `max_ticks`
/// elapse.
pub fn run_schedule(
    scenario: Scenario,
    seed: u64,
    mode: Option<PerceptionMode>,
    schedule: &[(u64, OperatorCommand)],
    max_ticks: u64,
) -> Result<Engine, EngineError> {
    let mut engine = Engine::new(scenario, seed, mode);
    let mut held = OperatorCommand::zero(0.0);
    let mut idx = 0;
    while !engine.finished() && engine.control_tick_index() < max_ticks {
        let tick = engine.control_tick_index();
        let start = idx;
        while idx < schedule.len() && schedule[idx].0 <= tick {
            idx += 1;
        }
        held = merge_commands(&held, schedule[start..idx].iter().map(|(_, c)| c));
        engine.control_tick(&held)?;
        held.strap_trigger = false;
    }
    Ok(engine)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_keeps_triggers_and_latest_values() {
        let held = OperatorCommand::zero(0.0);
        let mut a = OperatorCommand::zero(0.1);
        a.strap_trigger = true;
        a.v_cmd = 0.2;
        let mut b = OperatorCommand::zero(0.2);
        b.v_cmd = 0.05;
        let m = merge_commands(&held, [&a, &b]);
        assert!(m.strap_trigger);
        assert_eq!(m.v_cmd, 0.05);
        let m2 = merge_commands(&m, []);
        assert!(!m2.strap_trigger);
        assert_eq!(m2.v_cmd, 0.05);
    }

    #[test]
    fn idle_engine_stays_put() {
        let s = Scenario::standard();
        let mut e = Engine::new(s, 0, None);
        let start = e.world().robot.pose;
        for _ in 0..100 {
            e.control_tick(&OperatorCommand::zero(0.0)).unwrap();
        }
        assert_eq!(e.world().robot.pose, start);
        assert_eq!(e.log().imu.len(), 101);
        assert_eq!(e.log().ticks.len(), 101);
        assert!((e.world().time - 1.0).abs() < 1e-12);
    }
}
