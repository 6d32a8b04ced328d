//! Node Control and Database Control running side by side, sharing only the
//! log and registry files.

use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use crate::access_log::LogFile;
use crate::clock::{SimTime, WallClock};
use crate::device::FieldSchedule;
use crate::net::sim::{self, SimConfig, SimReport};
use crate::registry::Registry;
use crate::validator::{self, Counters, ValidationRun};
use crate::Error;

#[derive(Debug, Clone, Copy)]
pub struct ConcurrentOptions {
    /// Virtual seconds per wall-clock second.
    pub time_scale: f64,
    /// How far (virtual) the validator's first pass trails the first poll.
    pub validator_offset: SimTime,
}

impl Default for ConcurrentOptions {
    fn default() -> Self {
        ConcurrentOptions {
            time_scale: 1.0,
            validator_offset: SimTime::ZERO,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub sim: SimReport,
    pub validation: Counters,
}

/// Runs the simulation on this thread and a validator on another. The
/// validator scans every `validation_delay` for `runtime + validation_delay`
/// and makes one last pass once the simulation has finished, so every
/// detection ends up with a verdict.
pub fn run_concurrent(
    config: &SimConfig,
    schedule: &FieldSchedule,
    log_path: &Path,
    registry_path: &Path,
    opts: ConcurrentOptions,
) -> Result<PipelineOutcome, Error> {
    config.validate()?;
    let plan = ValidationRun::new(config.runtime + config.validation_delay, config.validation_delay)?;
    let origin = Instant::now();
    let (done_tx, done_rx) = mpsc::channel::<()>();

    let validator_log = LogFile::open(log_path)?;
    let registry_path = registry_path.to_path_buf();
    let validator = thread::spawn(move || -> Result<Counters, Error> {
        let mut pacer = WallClock::new(origin, opts.time_scale).delayed(opts.validator_offset);
        let mut counters = plan.run(&validator_log, &registry_path, &mut pacer)?;
        // Either the producer finished or it died; drain in both cases.
        let _ = done_rx.recv();
        let registry = Registry::open(&registry_path)?;
        counters.record(&validator::validate_once(&validator_log, &registry)?);
        counters.passes += 1;
        Ok(counters)
    });

    let mut log = LogFile::open(log_path)?;
    let mut pacer = WallClock::new(origin, opts.time_scale);
    let sim_result = sim::run_paced(config, schedule, &mut log, &mut pacer);
    drop(done_tx);
    let validation = validator
        .join()
        .map_err(|_| Error::Thread("validator thread panicked".into()))?;
    Ok(PipelineOutcome {
        sim: sim_result?,
        validation: validation?,
    })
}
