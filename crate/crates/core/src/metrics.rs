//! Detection-count error analysis: experimental counts from simulation runs
//! against the theoretical count `floor(runtime / poll_delay)`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::access_log::MemoryLog;
use crate::clock::SimTime;
use crate::device::FieldSchedule;
use crate::net::sim::{self, SimConfig, SimError};

pub const CSV_HEADER: &str = "poll_delay_s,runtime_s,theoretical,experimental,percent_error";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("theoretical count is zero")]
    ZeroTheoretical,
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub fn theoretical_detections(runtime: SimTime, poll_delay: SimTime) -> Result<u64, MetricsError> {
    if poll_delay.is_zero() {
        return Err(MetricsError::ConfigInvalid("poll delay must be positive".into()));
    }
    Ok(runtime.div_floor(poll_delay))
}

/// `|experimental - theoretical| / theoretical * 100`.
pub fn percent_error(experimental: u64, theoretical: u64) -> Result<f64, MetricsError> {
    if theoretical == 0 {
        return Err(MetricsError::ZeroTheoretical);
    }
    Ok(experimental.abs_diff(theoretical) as f64 / theoretical as f64 * 100.0)
}

/// Two decimal places, as reported.
pub fn format_percent(p: f64) -> String {
    format!("{p:.2}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub poll_delay: SimTime,
    pub runtime: SimTime,
    pub experimental: u64,
    pub theoretical: u64,
    pub percent_error: f64,
}

impl RunResult {
    pub fn new(poll_delay: SimTime, runtime: SimTime, experimental: u64) -> Result<Self, MetricsError> {
        let theoretical = theoretical_detections(runtime, poll_delay)?;
        Ok(RunResult {
            poll_delay,
            runtime,
            experimental,
            theoretical,
            percent_error: percent_error(experimental, theoretical)?,
        })
    }
}

/// The jitter and tag presence applied to every cell of a grid.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub poll_delays: Vec<SimTime>,
    pub runtimes: Vec<SimTime>,
    pub jitter_max: SimTime,
    pub seed: u64,
}

impl GridSpec {
    /// Parses `"d1,d2;r1,r2"` (seconds).
    pub fn parse_grid(text: &str) -> Result<(Vec<SimTime>, Vec<SimTime>), MetricsError> {
        let bad = |m: String| MetricsError::ConfigInvalid(m);
        let (delays, runtimes) = text
            .split_once(';')
            .ok_or_else(|| bad(format!("grid {text:?} must look like \"delays;runtimes\"")))?;
        let list = |part: &str| -> Result<Vec<SimTime>, MetricsError> {
            part.split(',')
                .map(|v| {
                    let t: SimTime = v.parse().map_err(|e| bad(format!("{e}")))?;
                    if t.is_zero() {
                        return Err(bad(format!("grid value {v:?} must be positive")));
                    }
                    Ok(t)
                })
                .collect()
        };
        Ok((list(delays)?, list(runtimes)?))
    }
}

/// Simulates every (poll_delay, runtime) cell, delays outer, runtimes inner.
pub fn run_grid(spec: &GridSpec, schedule: &FieldSchedule) -> Result<Vec<RunResult>, MetricsError> {
    let mut out = Vec::new();
    for &pd in &spec.poll_delays {
        for &rt in &spec.runtimes {
            let config = SimConfig::new(pd, rt).with_jitter(spec.jitter_max, spec.seed);
            let mut log = MemoryLog::default();
            let report = sim::run(&config, schedule, &mut log)?;
            out.push(RunResult::new(pd, rt, report.detections)?);
        }
    }
    Ok(out)
}

/// The cell with the largest error; the first such cell on ties.
pub fn max_error(results: &[RunResult]) -> Option<&RunResult> {
    results.iter().reduce(|best, r| {
        if r.percent_error > best.percent_error {
            r
        } else {
            best
        }
    })
}

pub fn mean_error(results: &[RunResult]) -> Option<f64> {
    (!results.is_empty())
        .then(|| results.iter().map(|r| r.percent_error).sum::<f64>() / results.len() as f64)
}

/// Plain-text table with max and mean error lines.
pub fn report(results: &[RunResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>12} {:>10} {:>11} {:>12} {:>9}",
        "poll_delay_s", "runtime_s", "theoretical", "experimental", "error_%"
    );
    for r in results {
        let _ = writeln!(
            out,
            "{:>12} {:>10} {:>11} {:>12} {:>9}",
            r.poll_delay.to_string(),
            r.runtime.to_string(),
            r.theoretical,
            r.experimental,
            format_percent(r.percent_error)
        );
    }
    if let (Some(max), Some(mean)) = (max_error(results), mean_error(results)) {
        let _ = writeln!(
            out,
            "max error: {}% (poll_delay={}s runtime={}s)",
            format_percent(max.percent_error),
            max.poll_delay,
            max.runtime
        );
        let _ = writeln!(out, "mean error: {}%", format_percent(mean));
    }
    out
}

/// CSV with one row per run and no summary lines.
pub fn report_csv(results: &[RunResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.poll_delay,
            r.runtime,
            r.theoretical,
            r.experimental,
            format_percent(r.percent_error)
        );
    }
    out
}
