//! Database Control: periodically pick up unchecked detections from the log,
//! decide each against the registry and write the verdict back.
//!
//! The validator only ever touches the log and registry files. Each pass
//! works from a snapshot of the log; entries appended while a pass runs are
//! left for the next one.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::access_log::{LogError, LogFile, Verdict};
use crate::clock::{Pacer, SimTime};
use crate::codec::TagId;
use crate::registry::{Registry, RegistryError};

#[derive(Debug, Error)]
pub enum ValidatorError {
    #[error("invalid validation run: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Y when enrolled and authorized, N when enrolled but not, NF otherwise.
pub fn decide(tag: &TagId, registry: &Registry) -> Verdict {
    match registry.lookup(tag) {
        Some(rec) if rec.is_authorized => Verdict::Granted,
        Some(_) => Verdict::Denied,
        None => Verdict::NotFound,
    }
}

/// One pass: annotate every currently unchecked entry. Returns the
/// annotations performed in log order.
pub fn validate_once(log: &LogFile, registry: &Registry) -> Result<Vec<(usize, Verdict)>, ValidatorError> {
    let decisions: Vec<(usize, Verdict)> = log
        .scan_unchecked()?
        .into_iter()
        .map(|(i, e)| (i, decide(&e.tag, registry)))
        .collect();
    log.annotate_batch(&decisions)?;
    Ok(decisions)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub scanned: u64,
    pub granted: u64,
    pub denied: u64,
    pub not_found: u64,
    pub passes: u64,
}

impl Counters {
    pub fn record(&mut self, verdicts: &[(usize, Verdict)]) {
        for (_, v) in verdicts {
            self.scanned += 1;
            match v {
                Verdict::Granted => self.granted += 1,
                Verdict::Denied => self.denied += 1,
                Verdict::NotFound => self.not_found += 1,
            }
        }
    }
}

impl fmt::Display for Counters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "scanned={} Y={} N={} NF={}",
            self.scanned, self.granted, self.denied, self.not_found
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationRun {
    pub duration: SimTime,
    pub scan_interval: SimTime,
}

impl ValidationRun {
    pub const DEFAULT_INTERVAL: SimTime = SimTime::from_secs(2);

    pub fn new(duration: SimTime, scan_interval: SimTime) -> Result<Self, ValidatorError> {
        if scan_interval.is_zero() {
            return Err(ValidatorError::ConfigInvalid("scan interval must be positive".into()));
        }
        if duration < scan_interval {
            return Err(ValidatorError::ConfigInvalid(format!(
                "duration {duration}s is shorter than the scan interval {scan_interval}s"
            )));
        }
        Ok(ValidationRun {
            duration,
            scan_interval,
        })
    }

    /// Pass instants: 0, interval, 2·interval, … strictly before `duration`.
    pub fn pass_times(&self) -> impl Iterator<Item = SimTime> + '_ {
        (0u64..)
            .map(move |k| self.scan_interval.times(k))
            .take_while(move |t| *t < self.duration)
    }

    /// Runs every pass, reloading the registry file each time so changes
    /// made while the validator runs are honoured.
    pub fn run(
        &self,
        log: &LogFile,
        registry_path: &Path,
        pacer: &mut dyn Pacer,
    ) -> Result<Counters, ValidatorError> {
        let mut counters = Counters::default();
        for t in self.pass_times() {
            pacer.wait_until(t);
            let registry = Registry::open(registry_path)?;
            let done = validate_once(log, &registry)?;
            log::debug!("validation pass at t={t}: {} annotated", done.len());
            counters.record(&done);
            counters.passes += 1;
        }
        Ok(counters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::TagRecord;
    use chrono::NaiveDate;

    fn tag(s: &str) -> TagId {
        s.parse().unwrap()
    }

    fn at(s: u32) -> chrono::NaiveDateTime {
        NaiveDate::from_ymd_opt(2010, 7, 15)
            .unwrap()
            .and_hms_opt(10, 0, s)
            .unwrap()
    }

    fn fixture() -> (tempfile::TempDir, LogFile, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let log = LogFile::open(dir.path().join("log")).unwrap();
        let reg_path = dir.path().join("registry");
        let mut reg = Registry::open(&reg_path).unwrap();
        reg.enroll(TagRecord::new(tag("AAAAAAAA"), true, "Yes")).unwrap();
        reg.enroll(TagRecord::new(tag("BBBBBBBB"), false, "No")).unwrap();
        (dir, log, reg_path)
    }

    #[test]
    fn decide_examples() {
        let (_d, _log, reg_path) = fixture();
        let reg = Registry::open(reg_path).unwrap();
        assert_eq!(decide(&tag("AAAAAAAA"), &reg), Verdict::Granted);
        assert_eq!(decide(&tag("BBBBBBBB"), &reg), Verdict::Denied);
        assert_eq!(decide(&tag("CCCCCCCC"), &reg), Verdict::NotFound);
    }

    #[test]
    fn validate_once_mixed() {
        let (_d, log, reg_path) = fixture();
        let reg = Registry::open(reg_path).unwrap();
        for (s, t) in [(1, "AAAAAAAA"), (2, "BBBBBBBB"), (3, "CCCCCCCC")] {
            log.append_detection(at(s), &tag(t)).unwrap();
        }
        assert_eq!(
            validate_once(&log, &reg).unwrap(),
            vec![
                (0, Verdict::Granted),
                (1, Verdict::Denied),
                (2, Verdict::NotFound)
            ]
        );
        assert!(validate_once(&log, &reg).unwrap().is_empty());
        assert!(log.scan_unchecked().unwrap().is_empty());
    }

    #[test]
    fn validate_once_empty_log() {
        let (_d, log, reg_path) = fixture();
        assert!(validate_once(&log, &Registry::open(reg_path).unwrap())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn pass_count() {
        let run = ValidationRun::new(SimTime::from_secs(10), SimTime::from_secs(2)).unwrap();
        assert_eq!(run.pass_times().count(), 5);
        assert!(matches!(
            ValidationRun::new(SimTime::from_secs(1), SimTime::from_secs(2)),
            Err(ValidatorError::ConfigInvalid(_))
        ));
        assert!(ValidationRun::new(SimTime::from_secs(1), SimTime::ZERO).is_err());
    }

    /// Appends detections between passes, the way Node Control would.
    struct Producer<'a> {
        log: &'a LogFile,
        appended: u32,
    }

    impl Pacer for Producer<'_> {
        fn wait_until(&mut self, at_t: SimTime) {
            // Two detections per interval until t=6.
            if at_t <= SimTime::from_secs(6) {
                for _ in 0..2 {
                    self.log
                        .append_detection(at(self.appended), &tag("AAAAAAAA"))
                        .unwrap();
                    self.appended += 1;
                }
            }
        }
    }

    #[test]
    fn interleaved_producer_is_fully_validated() {
        let (_d, log, reg_path) = fixture();
        let run = ValidationRun::new(SimTime::from_secs(10), SimTime::from_secs(2)).unwrap();
        let mut producer = Producer {
            log: &log,
            appended: 0,
        };
        let counters = run.run(&log, &reg_path, &mut producer).unwrap();
        assert_eq!(producer.appended, 8);
        assert_eq!(counters.scanned, 8);
        assert_eq!(counters.granted, 8);
        assert_eq!(counters.passes, 5);
        assert!(log.scan_unchecked().unwrap().is_empty());
    }

    #[test]
    fn registry_changes_between_passes_are_seen() {
        let (_d, log, reg_path) = fixture();
        struct Revoker<'a> {
            log: &'a LogFile,
            reg: &'a Path,
        }
        impl Pacer for Revoker<'_> {
            fn wait_until(&mut self, t: SimTime) {
                self.log.append_detection(at(0), &tag("AAAAAAAA")).unwrap();
                if t == SimTime::from_secs(2) {
                    let mut r = Registry::open(self.reg).unwrap();
                    r.set_authorized(&tag("AAAAAAAA"), false).unwrap();
                }
            }
        }
        let run = ValidationRun::new(SimTime::from_secs(4), SimTime::from_secs(2)).unwrap();
        let c = run
            .run(&log, &reg_path, &mut Revoker { log: &log, reg: &reg_path })
            .unwrap();
        assert_eq!((c.granted, c.denied), (1, 1));
        assert_eq!(c.to_string(), "scanned=2 Y=1 N=1 NF=0");
    }

    #[test]
    fn parse_error_propagates() {
        let (_d, log, reg_path) = fixture();
        std::fs::write(log.path(), "garbage\n").unwrap();
        let reg = Registry::open(reg_path).unwrap();
        assert!(matches!(
            validate_once(&log, &reg),
            Err(ValidatorError::Log(LogError::Parse { line: 1, .. }))
        ));
    }
}
