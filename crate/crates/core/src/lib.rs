//! Simulated RFID access control over a wireless sensor network.
//!
//! A polling node periodically triggers a chain of RPCs
//! (Polling → Bridge → PC → RFID node → PC) that makes an emulated SM130
//! reader report the tag in its field over I²C. Detected tags are appended
//! to a log; a separate validator annotates each detection with a verdict
//! from the tag registry.
//!
//! * [`codec`]: SM130 frame encoding, decoding and tag extraction
//! * [`device`]: the reader on a virtual I²C bus, plus tag presence schedules
//! * [`net`]: discrete-event network, node programs and the simulation runner
//! * [`access_log`]: the detection log
//! * [`registry`]: the tag database
//! * [`validator`]: the verdict loop
//! * [`metrics`]: detection-count error analysis
//! * [`pipeline`]: simulation and validator running concurrently
//! * [`cli`]: the `rfidnet` command line

pub mod access_log;
pub mod cli;
pub mod clock;
pub mod codec;
pub mod device;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod registry;
pub mod validator;

use thiserror::Error;

pub use access_log::{LogEntry, LogFile, MemoryLog, Verdict};
pub use clock::SimTime;
pub use codec::TagId;
pub use device::FieldSchedule;
pub use net::sim::{SimConfig, SimReport};
pub use registry::{Registry, TagRecord};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error(transparent)]
    Schedule(#[from] device::ScheduleError),
    #[error(transparent)]
    Sim(#[from] net::sim::SimError),
    #[error(transparent)]
    Log(#[from] access_log::LogError),
    #[error(transparent)]
    Registry(#[from] registry::RegistryError),
    #[error(transparent)]
    Validator(#[from] validator::ValidatorError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("{0}")]
    Thread(String),
}
