//! Fixtures shared by the benchmarks.

use resqsim_core::harness::{run_trial, TrialConfig, TrialRun};
use resqsim_core::{PerceptionMode, Scenario};

/// A completed standard trial with the scripted operator.
pub fn standard_run(mode: PerceptionMode, seed: u64) -> TrialRun {
    run_trial(&TrialConfig {
        scenario: Scenario::standard(),
        mode,
        seed,
        ideal_operator: false,
    })
    .expect("standard trial completes")
}
