//! SM130 reader emulation on a virtual I²C bus.
//!
//! The host writes `[write_addr, length, command, data..., csum]`; the reader
//! answers a select-tag command from whatever tag occupies its field at that
//! instant. A later read at `write_addr | 1` returns the answer front-padded
//! with zeros to the requested size, then the answer is consumed.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::clock::SimTime;
use crate::codec::{
    self, CommandFrame, ResponseFrame, TagId, CMD_SELECT_TAG, DEFAULT_NO_TAG_STATUS,
    DEFAULT_TAG_TYPE,
};

pub const DEFAULT_SLAVE_ADDR: u8 = 0x42;
/// Enough for length, command, tag type, a 7-byte serial and the checksum.
pub const DEFAULT_READ_SIZE: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("entry for {tag}: start {start} is not before end {end}")]
    EmptyInterval {
        tag: TagId,
        start: SimTime,
        end: SimTime,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("tags {first} and {second} are both in the field at t={at}")]
pub struct OverlapError {
    pub first: TagId,
    pub second: TagId,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldEntry {
    pub tag: TagId,
    pub start: SimTime,
    pub end: SimTime,
}

impl FieldEntry {
    fn contains(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }
}

/// Which tag sits in the reader's field, and when. Intervals are half-open:
/// `[start, end)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldSchedule {
    entries: Vec<FieldEntry>,
}

impl FieldSchedule {
    pub fn new(entries: Vec<FieldEntry>) -> Result<Self, ScheduleError> {
        for e in &entries {
            if e.start >= e.end {
                return Err(ScheduleError::EmptyInterval {
                    tag: e.tag.clone(),
                    start: e.start,
                    end: e.end,
                });
            }
        }
        Ok(FieldSchedule { entries })
    }

    /// A single tag present over `[0, end)`.
    pub fn always(tag: TagId, end: SimTime) -> Self {
        FieldSchedule {
            entries: vec![FieldEntry {
                tag,
                start: SimTime::ZERO,
                end,
            }],
        }
    }

    pub fn entries(&self) -> &[FieldEntry] {
        &self.entries
    }

    /// The tag in the field at `t`, if any.
    pub fn field_state(&self, t: SimTime) -> Result<Option<&TagId>, OverlapError> {
        let mut hits = self.entries.iter().filter(|e| e.contains(t));
        let first = hits.next();
        if let (Some(a), Some(b)) = (first, hits.next()) {
            return Err(OverlapError {
                first: a.tag.clone(),
                second: b.tag.clone(),
                at: t,
            });
        }
        Ok(first.map(|e| &e.tag))
    }

    /// Checks the single-antenna rule over the whole schedule.
    pub fn check_overlaps(&self) -> Result<(), OverlapError> {
        let mut sorted: Vec<&FieldEntry> = self.entries.iter().collect();
        sorted.sort_by_key(|e| (e.start, e.end));
        for pair in sorted.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(OverlapError {
                    first: pair[0].tag.clone(),
                    second: pair[1].tag.clone(),
                    at: pair[1].start,
                });
            }
        }
        Ok(())
    }
}

impl FromStr for FieldSchedule {
    type Err = ScheduleError;

    /// `<tag-hex> <t_start> <t_end>` per line; `#` starts a comment.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| ScheduleError::Parse { line: n + 1, reason };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [tag, start, end] = fields[..] else {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            };
            let tag: TagId = tag.parse().map_err(|e| err(format!("{e}")))?;
            let start: SimTime = start.parse().map_err(|e| err(format!("{e}")))?;
            let end: SimTime = end.parse().map_err(|e| err(format!("{e}")))?;
            entries.push(FieldEntry { tag, start, end });
        }
        FieldSchedule::new(entries)
    }
}

impl fmt::Display for FieldSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{} {} {}", e.tag, e.start, e.end)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceConfig {
    pub slave_addr: u8,
    pub read_size: usize,
    pub no_tag_status: u8,
    pub tag_type: u8,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            slave_addr: DEFAULT_SLAVE_ADDR,
            read_size: DEFAULT_READ_SIZE,
            no_tag_status: DEFAULT_NO_TAG_STATUS,
            tag_type: DEFAULT_TAG_TYPE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum I2cError {
    #[error("no ack from address {addr:#04x} after {attempts} attempts")]
    NoAck { addr: u8, attempts: u32 },
    #[error(transparent)]
    Field(#[from] OverlapError),
}

/// What the last accepted write did to the device, for inspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteOutcome {
    Answered,
    /// Valid frame, but not a command this emulator answers.
    Ignored,
    BadFrame(codec::CodecError),
}

#[derive(Debug, Clone)]
pub struct Sm130 {
    config: DeviceConfig,
    field: FieldSchedule,
    pending: Option<Vec<u8>>,
    last_write: Option<WriteOutcome>,
    last_ignore_first_ack: Option<bool>,
}

impl Sm130 {
    pub fn new(config: DeviceConfig, field: FieldSchedule) -> Self {
        assert!(config.slave_addr & 1 == 0, "slave address must be even");
        Sm130 {
            config,
            field,
            pending: None,
            last_write: None,
            last_ignore_first_ack: None,
        }
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn pending_response(&self) -> Option<&[u8]> {
        self.pending.as_deref()
    }

    pub fn last_write(&self) -> Option<&WriteOutcome> {
        self.last_write.as_ref()
    }

    pub fn last_ignore_first_ack(&self) -> Option<bool> {
        self.last_ignore_first_ack
    }

    fn ack(&self, addr: u8, retries: u32, expected: u8) -> Result<(), I2cError> {
        // The first attempt either matches or it never will.
        if addr == expected {
            Ok(())
        } else {
            Err(I2cError::NoAck {
                addr,
                attempts: retries + 1,
            })
        }
    }

    /// Sends `payload` (write address first). Returns the number of bytes
    /// sent, or 0 when the address was not acknowledged. A frame that fails
    /// to decode leaves the device silent.
    pub fn i2c_write(
        &mut self,
        payload: &[u8],
        retries: u32,
        ignore_first_ack: bool,
        now: SimTime,
    ) -> Result<usize, I2cError> {
        self.last_ignore_first_ack = Some(ignore_first_ack);
        let Some((&addr, frame)) = payload.split_first() else {
            return Ok(0);
        };
        match self.ack(addr, retries, self.config.slave_addr) {
            Err(I2cError::NoAck { .. }) => return Ok(0),
            Err(e) => return Err(e),
            Ok(()) => {}
        }
        // Any accepted write replaces an unread answer.
        self.pending = None;
        let decoded = match decode_command(frame) {
            Ok(cmd) => cmd,
            Err(e) => {
                self.last_write = Some(WriteOutcome::BadFrame(e));
                return Ok(payload.len());
            }
        };
        if decoded.command != CMD_SELECT_TAG {
            self.last_write = Some(WriteOutcome::Ignored);
            return Ok(payload.len());
        }
        let answer = match self.field.field_state(now)? {
            Some(tag) => ResponseFrame::tag(CMD_SELECT_TAG, self.config.tag_type, tag.serial())
                .expect("serials are at most 7 bytes"),
            None => ResponseFrame::no_tag(CMD_SELECT_TAG, self.config.no_tag_status),
        };
        self.pending = Some(answer.encode());
        self.last_write = Some(WriteOutcome::Answered);
        Ok(payload.len())
    }

    /// Reads `num_to_read` bytes from address `addr_byte`, which must be the
    /// read address `slave_addr | 1`.
    pub fn i2c_read(
        &mut self,
        addr_byte: u8,
        num_to_read: usize,
        retries: u32,
        ignore_first_ack: bool,
    ) -> Result<Vec<u8>, I2cError> {
        self.last_ignore_first_ack = Some(ignore_first_ack);
        self.ack(addr_byte, retries, self.config.slave_addr | 1)?;
        let mut out = vec![0u8; num_to_read];
        if let Some(resp) = self.pending.take() {
            if resp.len() >= num_to_read {
                out.copy_from_slice(&resp[..num_to_read]);
            } else {
                out[num_to_read - resp.len()..].copy_from_slice(&resp);
            }
        }
        Ok(out)
    }
}

/// Parses a host-to-reader frame. Unlike responses there is no padding.
fn decode_command(frame: &[u8]) -> Result<CommandFrame, codec::CodecError> {
    let (&length, rest) = frame.split_first().ok_or(codec::CodecError::Empty)?;
    if length == 0 {
        return Err(codec::CodecError::Empty);
    }
    if length > codec::MAX_LENGTH_BYTE {
        return Err(codec::CodecError::FrameTooLong(length));
    }
    let needed = length as usize + 2;
    if frame.len() < needed {
        return Err(codec::CodecError::Truncated {
            needed,
            available: frame.len(),
        });
    }
    let command = rest[0];
    let data = &rest[1..length as usize];
    let csum = frame[needed - 1];
    let expected = codec::checksum(length, command, data);
    if csum != expected {
        return Err(codec::CodecError::BadChecksum {
            expected,
            actual: csum,
        });
    }
    Ok(CommandFrame::new(command, data.to_vec()))
}
