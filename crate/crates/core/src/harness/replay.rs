//! Playback of recorded trials.

use std::time::{Duration, Instant};

use super::log::{TickRecord, TrialLog};

/// Wall-clock offset of each record from the first one at `speed`×.
pub fn schedule(log: &TrialLog, speed: f64) -> impl Iterator<Item = (Duration, &TickRecord)> {
    let t0 = log.ticks.first().map(|r| r.t).unwrap_or(0.0);
    let speed = if speed > 0.0 { speed } else { 1.0 };
    log.ticks
        .iter()
        .map(move |r| (Duration::from_secs_f64(((r.t - t0) / speed).max(0.0)), r))
}

/// Feeds every record to `sink` on its playback schedule, blocking the
/// calling thread. `sink` returns `false` to stop early. Returns the number
/// of records delivered.
pub fn replay_paced<F>(log: &TrialLog, speed: f64, mut sink: F) -> usize
where
    F: FnMut(&TickRecord) -> bool,
{
    let start = Instant::now();
    let mut n = 0;
    for (offset, rec) in schedule(log, speed) {
        let due = start + offset;
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
        n += 1;
        if !sink(rec) {
            break;
        }
    }
    n
}
