//! Wires the four nodes onto a [`Network`] and runs the detection chain.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::rc::Rc;

use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

use super::nodes::{BridgeNode, PcNode, PcStats, PollingNode, RfidNode, FN_POLL, FN_RECEIVE_RESULT};
use super::{NetError, Network, NodeAddress, TraceRecord};
use crate::access_log::DetectionSink;
use crate::clock::{NoWait, Pacer, SimTime};
use crate::device::{DeviceConfig, FieldSchedule, Sm130};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wiring {
    pub polling: NodeAddress,
    pub bridge: NodeAddress,
    pub pc: NodeAddress,
    pub rfid: NodeAddress,
}

impl Default for Wiring {
    fn default() -> Self {
        Wiring {
            polling: NodeAddress::new(0x00, 0xC0, 0xDE),
            bridge: NodeAddress::new(0x00, 0x14, 0x62),
            pc: NodeAddress::new(0x00, 0x00, 0x01),
            rfid: NodeAddress::new(0x00, 0x55, 0x4B),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub poll_delay: SimTime,
    pub runtime: SimTime,
    /// Scan interval of a validator run alongside the simulation.
    pub validation_delay: SimTime,
    /// Upper bound of the uniform per-hop delay; zero disables jitter.
    pub jitter_max: SimTime,
    pub seed: u64,
    /// Calendar time of virtual instant zero, used for log timestamps.
    pub epoch: NaiveDateTime,
    pub wiring: Wiring,
    pub device: DeviceConfig,
    /// Name of the PC function that receives the reader's answer.
    pub callback: String,
    pub trace: bool,
}

impl SimConfig {
    pub const DEFAULT_POLL_DELAY: SimTime = SimTime::from_secs(2);

    pub fn new(poll_delay: SimTime, runtime: SimTime) -> Self {
        SimConfig {
            poll_delay,
            runtime,
            validation_delay: SimTime::from_secs(2),
            jitter_max: SimTime::ZERO,
            seed: 0,
            epoch: default_epoch(),
            wiring: Wiring::default(),
            device: DeviceConfig::default(),
            callback: FN_RECEIVE_RESULT.to_string(),
            trace: false,
        }
    }

    pub fn with_jitter(mut self, jitter_max: SimTime, seed: u64) -> Self {
        self.jitter_max = jitter_max;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ConfigInvalid(m));
        if self.poll_delay.is_zero() {
            return bad("poll delay must be positive".into());
        }
        if self.runtime.is_zero() {
            return bad("runtime must be positive".into());
        }
        if self.validation_delay.is_zero() {
            return bad("validation delay must be positive".into());
        }
        if self.poll_delay > self.runtime {
            return bad(format!(
                "poll delay {}s exceeds runtime {}s",
                self.poll_delay, self.runtime
            ));
        }
        let w = &self.wiring;
        let distinct: BTreeSet<_> = [w.polling, w.bridge, w.pc, w.rfid].into_iter().collect();
        if distinct.len() != 4 {
            return bad("node addresses must be distinct".into());
        }
        if self.device.slave_addr & 1 == 1 {
            return bad(format!(
                "slave address {:#04x} must be even",
                self.device.slave_addr
            ));
        }
        if !(3..=255).contains(&self.device.read_size) {
            return bad(format!("read size {} out of range 3..=255", self.device.read_size));
        }
        Ok(())
    }

    /// Number of polls the run issues: one per whole poll period.
    pub fn expected_polls(&self) -> u64 {
        self.runtime.div_floor(self.poll_delay)
    }
}

/// 15-07-2010 00:00:00.
pub fn default_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2010, 7, 15)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimReport {
    pub polls: u64,
    pub detections: u64,
    pub no_tag: u64,
    /// Answers that arrived but were empty or undecodable.
    pub failed: u64,
    /// Messages dropped at a node that lacked the called function.
    pub dropped: u64,
    /// Events still queued when the run ended.
    pub in_flight: u64,
    pub events: u64,
    pub trace: Vec<TraceRecord>,
    pub last_select_payload: Option<Vec<u8>>,
}

impl SimReport {
    /// Polls that produced neither a detection nor a "no tag" answer.
    pub fn lost(&self) -> u64 {
        self.polls.saturating_sub(self.detections + self.no_tag)
    }
}

impl fmt::Display for SimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "polls={} detections={} no_tag={} lost={} dropped={} in_flight={}",
            self.polls,
            self.detections,
            self.no_tag,
            self.lost(),
            self.dropped,
            self.in_flight
        )
    }
}

/// Runs as fast as possible.
pub fn run(
    config: &SimConfig,
    schedule: &FieldSchedule,
    sink: &mut dyn DetectionSink,
) -> Result<SimReport, SimError> {
    run_paced(config, schedule, sink, &mut NoWait)
}

/// Runs with `pacer` deciding how virtual time maps to the wall clock.
/// Polls fire at 0, poll_delay, 2·poll_delay, … and the run stops at
/// `runtime`; chains still in flight then are lost.
pub fn run_paced(
    config: &SimConfig,
    schedule: &FieldSchedule,
    sink: &mut dyn DetectionSink,
    pacer: &mut dyn Pacer,
) -> Result<SimReport, SimError> {
    config.validate()?;
    schedule
        .check_overlaps()
        .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
    let w = config.wiring;
    let polls = Rc::new(RefCell::new(0));
    let pc_stats = Rc::new(RefCell::new(PcStats::default()));

    let mut net = Network::new(config.jitter_max, config.seed);
    if config.trace {
        net = net.with_trace();
    }
    net.register(
        w.polling,
        PollingNode {
            bridge: w.bridge,
            period: config.poll_delay,
            last_slot: config.runtime.saturating_sub(config.poll_delay),
            polls: polls.clone(),
        },
    )?;
    net.register(w.bridge, BridgeNode { pc: w.pc })?;
    net.register(
        w.pc,
        PcNode::new(
            w.rfid,
            config.device.slave_addr,
            config.callback.clone(),
            config.epoch,
            sink,
            pc_stats.clone(),
        ),
    )?;
    net.register(
        w.rfid,
        RfidNode {
            device: Sm130::new(config.device, schedule.clone()),
        },
    )?;
    net.schedule_timer(w.polling, SimTime::ZERO, FN_POLL)?;
    net.run_until(config.runtime, pacer)?;

    let stats = net.stats();
    let pc = pc_stats.borrow().clone();
    let polls = *polls.borrow();
    Ok(SimReport {
        polls,
        detections: pc.detections,
        no_tag: pc.no_tag,
        failed: pc.failed,
        dropped: stats.unknown_function,
        in_flight: net.pending() as u64,
        events: stats.events,
        trace: net.take_trace(),
        last_select_payload: pc.last_payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access_log::MemoryLog;
    use crate::codec::TagId;

    fn tag() -> TagId {
        "AABBCCDD".parse().unwrap()
    }

    fn always(secs: u64) -> FieldSchedule {
        FieldSchedule::always(tag(), SimTime::from_secs(secs))
    }

    fn cfg(pd: u64, rt: u64) -> SimConfig {
        SimConfig::new(SimTime::from_secs(pd), SimTime::from_secs(rt))
    }

    #[test]
    fn thirty_polls_in_sixty_seconds() {
        let mut log = MemoryLog::default();
        let r = run(&cfg(2, 60), &always(60), &mut log).unwrap();
        assert_eq!((r.polls, r.detections, r.lost()), (30, 30, 0));
        assert_eq!(log.entries.len(), 30);
    }

    #[test]
    fn five_second_poll() {
        let mut log = MemoryLog::default();
        let r = run(&cfg(5, 30), &always(30), &mut log).unwrap();
        assert_eq!(r.detections, 6);
    }

    #[test]
    fn empty_field_gives_no_tag_answers() {
        let mut log = MemoryLog::default();
        let r = run(&cfg(2, 20), &FieldSchedule::default(), &mut log).unwrap();
        assert_eq!((r.polls, r.detections, r.no_tag), (10, 0, 10));
        assert!(log.entries.is_empty());
    }

    #[test]
    fn partial_period_is_not_polled() {
        let mut log = MemoryLog::default();
        let r = run(&cfg(2, 7), &always(7), &mut log).unwrap();
        assert_eq!(r.polls, 3);
    }

    #[test]
    fn misnamed_callback_loses_every_detection() {
        let mut c = cfg(2, 10);
        c.callback = "receiveResults".into();
        let mut log = MemoryLog::default();
        let r = run(&c, &always(10), &mut log).unwrap();
        assert_eq!((r.polls, r.detections, r.dropped, r.lost()), (5, 0, 5, 5));
    }

    #[test]
    fn timestamps_follow_virtual_time() {
        let mut log = MemoryLog::default();
        run(&cfg(5, 15), &always(15), &mut log).unwrap();
        let rendered = log.render();
        assert_eq!(
            rendered,
            "15-07-2010 00:00:00\tAABBCCDD\n15-07-2010 00:00:05\tAABBCCDD\n15-07-2010 00:00:10\tAABBCCDD\n"
        );
    }

    #[test]
    fn config_errors() {
        let mut log = MemoryLog::default();
        for c in [cfg(0, 10), cfg(2, 0), cfg(20, 10)] {
            assert!(matches!(
                run(&c, &always(1), &mut log),
                Err(SimError::ConfigInvalid(_))
            ));
        }
        let mut c = cfg(2, 10);
        c.wiring.pc = c.wiring.bridge;
        assert!(run(&c, &always(1), &mut log).is_err());
        let mut c = cfg(2, 10);
        c.device.slave_addr = 0x43;
        assert!(run(&c, &always(1), &mut log).is_err());
        let overlapping: FieldSchedule = "AABBCCDD 0 10\n11223344 5 10\n".parse().unwrap();
        assert!(matches!(
            run(&cfg(2, 10), &overlapping, &mut log),
            Err(SimError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn trace_shows_the_chain() {
        let mut c = cfg(2, 2);
        c.trace = true;
        let mut log = MemoryLog::default();
        let r = run(&c, &always(2), &mut log).unwrap();
        let lines: Vec<String> = r.trace.iter().map(ToString::to_string).collect();
        assert_eq!(
            lines,
            [
                "t=0 00:C0:DE->00:C0:DE poll",
                "t=0 00:C0:DE->00:14:62 ping",
                "t=0 00:14:62->00:00:01 selectTag",
                "t=0 00:00:01->00:55:4B sendReceiveCommand",
                "t=0 00:55:4B->00:00:01 receiveResult",
            ]
        );
    }
}
