//! The `rfidnet` command line.
//!
//! Exit codes: 0 success, 1 domain or runtime error, 2 usage or
//! configuration error. Results go to standard output, diagnostics to
//! standard error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDateTime;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::access_log::{LogFile, TIMESTAMP_FORMAT};
use crate::clock::{NoWait, Pacer, SimTime, WallClock};
use crate::codec::TagId;
use crate::device::FieldSchedule;
use crate::metrics::{self, GridSpec};
use crate::net::sim::{self, SimConfig};
use crate::pipeline::{self, ConcurrentOptions};
use crate::registry::{Registry, RegistryError, Table, TagRecord};
use crate::validator::ValidationRun;
use crate::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

const DEFAULT_LOG: &str = "detections.log";
const DEFAULT_REGISTRY: &str = "registry.tsv";
/// Tag used by `report` when no scenario is given.
const DEFAULT_REPORT_TAG: &str = "AABBCCDD";

#[derive(Debug, Parser)]
#[command(name = "rfidnet", version, about = "Simulated RFID access control over a sensor network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the polling chain and log every detected tag.
    Simulate(SimulateArgs),
    /// Manage the tag registry.
    Registry(RegistryArgs),
    /// Annotate unchecked log entries with verdicts.
    Validate(ValidateArgs),
    /// Run a grid of simulations and report detection-count errors.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Seconds between polls.
    #[arg(long, default_value = "2", value_parser = positive_secs)]
    poll_delay: SimTime,
    /// Length of the run in seconds.
    #[arg(long, value_parser = positive_secs)]
    runtime: SimTime,
    /// Tag presence schedule: one `<tag> <start> <end>` per line.
    #[arg(long)]
    scenario: PathBuf,
    /// Upper bound of the random per-hop delay in seconds.
    #[arg(long, default_value = "0")]
    jitter_max: SimTime,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "LOG", default_value = DEFAULT_LOG)]
    log: PathBuf,
    /// Calendar time of the first poll, `DD-MM-YYYY HH:MM:SS`.
    #[arg(long, value_parser = parse_start)]
    start: Option<NaiveDateTime>,
    /// Print every delivered message.
    #[arg(long)]
    trace: bool,
    /// Validate concurrently while simulating.
    #[arg(long)]
    with_validator: bool,
    #[arg(long, env = "REGISTRY", default_value = DEFAULT_REGISTRY)]
    registry: PathBuf,
    /// Validator scan interval in seconds.
    #[arg(long, default_value = "2", value_parser = positive_secs)]
    validation_delay: SimTime,
    /// Virtual seconds per wall-clock second; 0 runs unpaced.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative_scale)]
    time_scale: f64,
}

#[derive(Debug, Args)]
struct RegistryArgs {
    #[arg(long, env = "REGISTRY", default_value = DEFAULT_REGISTRY, global = true)]
    registry: PathBuf,
    #[command(subcommand)]
    action: RegistryAction,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum YesNo {
    #[value(alias = "Yes", alias = "YES")]
    Yes,
    #[value(alias = "No", alias = "NO")]
    No,
}

#[derive(Debug, Subcommand)]
enum RegistryAction {
    /// Add a tag.
    Enroll {
        tag: TagId,
        #[arg(long)]
        name: String,
        #[arg(long, value_enum)]
        authorized: YesNo,
    },
    /// Mark a tag as not authorized.
    Revoke { tag: TagId },
    /// Mark a tag as authorized.
    Authorize { tag: TagId },
    /// Print every record.
    List,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Total running time in seconds.
    #[arg(long)]
    duration: SimTime,
    /// Seconds between passes.
    #[arg(long, default_value = "2")]
    interval: SimTime,
    #[arg(long, env = "LOG", default_value = DEFAULT_LOG)]
    log: PathBuf,
    #[arg(long, env = "REGISTRY", default_value = DEFAULT_REGISTRY)]
    registry: PathBuf,
    /// Virtual seconds per wall-clock second; 0 runs unpaced.
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_scale)]
    time_scale: f64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// `"d1,d2,...;r1,r2,..."` poll delays and runtimes in seconds.
    #[arg(long)]
    grid: String,
    /// Tag presence schedule; defaults to one tag present throughout.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "0")]
    jitter_max: SimTime,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit CSV instead of a table.
    #[arg(long)]
    csv: bool,
}

fn positive_secs(s: &str) -> Result<SimTime, String> {
    let t: SimTime = s.parse().map_err(|e| format!("{e}"))?;
    if t.is_zero() {
        return Err("must be greater than zero".into());
    }
    Ok(t)
}

fn non_negative_scale(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("{s:?} is not a non-negative number")),
    }
}

fn parse_start(s: &str) -> Result<NaiveDateTime, String> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map_err(|e| format!("expected DD-MM-YYYY HH:MM:SS: {e}"))
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn domain(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        use crate::metrics::MetricsError;
        use crate::net::sim::SimError;
        use crate::validator::ValidatorError;
        let code = match &e {
            Error::Sim(SimError::ConfigInvalid(_))
            | Error::Validator(ValidatorError::ConfigInvalid(_))
            | Error::Metrics(MetricsError::ConfigInvalid(_))
            | Error::Metrics(MetricsError::ZeroTheoretical)
            | Error::Metrics(MetricsError::Sim(SimError::ConfigInvalid(_)))
            | Error::Schedule(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn fail<E: Into<Error>>(e: E) -> Failure {
    Failure::from(e.into())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{rendered}");
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Registry(a) => registry(a, out),
        Command::Validate(a) => validate(a, out),
        Command::Report(a) => report(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "rfidnet: {}", f.message);
            f.code
        }
    }
}

fn load_scenario(path: &Path) -> Result<FieldSchedule, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("scenario {}: {e}", path.display())))?;
    text.parse()
        .map_err(|e| Failure::usage(format!("scenario {}: {e}", path.display())))
}

fn pacer(scale: f64) -> Box<dyn Pacer> {
    if scale > 0.0 {
        Box::new(WallClock::new(Instant::now(), scale))
    } else {
        Box::new(NoWait)
    }
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let schedule = load_scenario(&a.scenario)?;
    let mut config = SimConfig::new(a.poll_delay, a.runtime).with_jitter(a.jitter_max, a.seed);
    config.validation_delay = a.validation_delay;
    config.trace = a.trace;
    if let Some(start) = a.start {
        config.epoch = start;
    }
    config.validate().map_err(fail)?;
    schedule
        .check_overlaps()
        .map_err(|e| Failure::usage(format!("scenario {}: {e}", a.scenario.display())))?;
    let mut log = LogFile::open(&a.log)
        .map_err(|e| Failure::usage(format!("log {}: {e}", a.log.display())))?;

    let (report, validation) = if a.with_validator {
        Registry::open(&a.registry)
            .map_err(|e| Failure::usage(format!("registry {}: {e}", a.registry.display())))?;
        let opts = ConcurrentOptions {
            time_scale: if a.time_scale > 0.0 { a.time_scale } else { 1.0 },
            validator_offset: SimTime::ZERO,
        };
        let outcome = pipeline::run_concurrent(&config, &schedule, &a.log, &a.registry, opts)
            .map_err(Failure::from)?;
        (outcome.sim, Some(outcome.validation))
    } else {
        let mut p = pacer(a.time_scale);
        let report = sim::run_paced(&config, &schedule, &mut log, p.as_mut()).map_err(fail)?;
        (report, None)
    };

    for rec in &report.trace {
        let _ = writeln!(out, "{rec}");
    }
    let _ = writeln!(out, "{report}");
    if let Some(counters) = validation {
        let _ = writeln!(out, "{counters}");
    }
    Ok(())
}

fn registry(a: RegistryArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut reg = Registry::open(&a.registry)
        .map_err(|e| Failure::usage(format!("registry {}: {e}", a.registry.display())))?;
    let domain = |e: RegistryError| match e {
        RegistryError::InvalidName(_) => Failure::usage(e.to_string()),
        _ => Failure::domain(e.to_string()),
    };
    match a.action {
        RegistryAction::Enroll {
            tag,
            name,
            authorized,
        } => {
            let record = TagRecord::new(tag, matches!(authorized, YesNo::Yes), name);
            reg.enroll(record.clone()).map_err(domain)?;
            let _ = write!(out, "enrolled {}", record.render());
        }
        RegistryAction::Revoke { tag } => {
            let r = reg.set_authorized(&tag, false).map_err(domain)?;
            let _ = write!(out, "revoked {}", r.render());
        }
        RegistryAction::Authorize { tag } => {
            let r = reg.set_authorized(&tag, true).map_err(domain)?;
            let _ = write!(out, "authorized {}", r.render());
        }
        RegistryAction::List => {
            let records = reg.list();
            let _ = write!(out, "{}", Table(&records));
        }
    }
    Ok(())
}

fn validate(a: ValidateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let plan = ValidationRun::new(a.duration, a.interval).map_err(fail)?;
    Registry::open(&a.registry)
        .map_err(|e| Failure::usage(format!("registry {}: {e}", a.registry.display())))?;
    let log = LogFile::open(&a.log)
        .map_err(|e| Failure::usage(format!("log {}: {e}", a.log.display())))?;
    let mut p = pacer(a.time_scale);
    let counters = plan.run(&log, &a.registry, p.as_mut()).map_err(fail)?;
    let _ = writeln!(out, "{counters}");
    Ok(())
}

fn report(a: ReportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (poll_delays, runtimes) =
        GridSpec::parse_grid(&a.grid).map_err(|e| Failure::usage(e.to_string()))?;
    let schedule = match &a.scenario {
        Some(path) => load_scenario(path)?,
        None => {
            let longest = runtimes.iter().copied().max().unwrap_or(SimTime::ZERO);
            let tag: TagId = DEFAULT_REPORT_TAG.parse().expect("valid default tag");
            FieldSchedule::always(tag, longest)
        }
    };
    let spec = GridSpec {
        poll_delays,
        runtimes,
        jitter_max: a.jitter_max,
        seed: a.seed,
    };
    let results = metrics::run_grid(&spec, &schedule).map_err(fail)?;
    let text = if a.csv {
        metrics::report_csv(&results)
    } else {
        metrics::report(&results)
    };
    let _ = write!(out, "{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (u8, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["rfidnet"];
        full.extend_from_slice(args);
        let code = run(full, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn zero_poll_delay_is_usage_error() {
        let (code, _, _) = call(&["simulate", "--poll-delay", "0", "--runtime", "10", "--scenario", "x"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn missing_scenario_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nowhere.txt");
        let log = dir.path().join("d.log");
        let (code, _, err) = call(&[
            "simulate",
            "--runtime",
            "10",
            "--scenario",
            missing.to_str().unwrap(),
            "--log",
            log.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("nowhere.txt"), "{err}");
    }

    #[test]
    fn report_rows_match_grid() {
        let (code, out, _) = call(&["report", "--grid", "2,5;30,60", "--csv"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.lines().count(), 5);
        assert!(out.lines().skip(1).all(|l| l.ends_with(",0.00")));
    }

    #[test]
    fn bad_grid_is_usage_error() {
        assert_eq!(call(&["report", "--grid", "2,5"]).0, EXIT_USAGE);
        assert_eq!(call(&["report", "--grid", "0;30"]).0, EXIT_USAGE);
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("simulate"));
    }
}
