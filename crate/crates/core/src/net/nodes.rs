//! The four node programs of the detection chain.
//!
//! Polling fires `ping` at the Bridge every poll period; the Bridge relays to
//! the PC's `selectTag`; the PC builds the select-tag write payload and calls
//! the RFID node's `sendReceiveCommand` with `receiveResult` as callback; the
//! RFID node drives the reader over I²C and returns the read as hex.

use std::cell::RefCell;
use std::rc::Rc;

use chrono::{Duration, NaiveDateTime};

use super::{Ctx, HandlerError, Invocation, NodeAddress, Script, Value};
use crate::access_log::DetectionSink;
use crate::clock::SimTime;
use crate::codec::{self, CommandFrame, Response};
use crate::device::{I2cError, Sm130};

pub const FN_POLL: &str = "poll";
pub const FN_PING: &str = "ping";
pub const FN_SELECT_TAG: &str = "selectTag";
pub const FN_SEND_RECEIVE: &str = "sendReceiveCommand";
pub const FN_RECEIVE_RESULT: &str = "receiveResult";

/// Fires a poll, then sleeps one poll period. Only polls whose whole period
/// fits before `last_slot + period` are issued.
pub struct PollingNode {
    pub bridge: NodeAddress,
    pub period: SimTime,
    /// Latest instant at which a poll may still fire.
    pub last_slot: SimTime,
    pub polls: Rc<RefCell<u64>>,
}

impl Script for PollingNode {
    fn invoke(&mut self, ctx: &mut Ctx<'_>, function: &str, _args: &[Value]) -> Result<Invocation, HandlerError> {
        if function != FN_POLL {
            return Ok(Invocation::Unknown);
        }
        *self.polls.borrow_mut() += 1;
        ctx.rpc(self.bridge, FN_PING, vec![])?;
        if ctx.now() + self.period <= self.last_slot {
            ctx.set_timer(self.period, FN_POLL);
        }
        Ok(Invocation::Returned(Value::None))
    }
}

pub struct BridgeNode {
    pub pc: NodeAddress,
}

impl Script for BridgeNode {
    fn invoke(&mut self, ctx: &mut Ctx<'_>, function: &str, _args: &[Value]) -> Result<Invocation, HandlerError> {
        if function != FN_PING {
            return Ok(Invocation::Unknown);
        }
        ctx.rpc(self.pc, FN_SELECT_TAG, vec![])?;
        Ok(Invocation::Returned(Value::None))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PcStats {
    pub select_sent: u64,
    pub detections: u64,
    pub no_tag: u64,
    /// Responses that were empty or could not be decoded.
    pub failed: u64,
    pub last_payload: Option<Vec<u8>>,
}

pub struct PcNode<'s> {
    pub rfid: NodeAddress,
    pub slave_addr: u8,
    /// Name the RFID node is asked to call back; the PC itself only
    /// answers to `receiveResult`.
    pub callback: String,
    pub epoch: NaiveDateTime,
    pub sink: &'s mut dyn DetectionSink,
    pub stats: Rc<RefCell<PcStats>>,
    current_cmd: Option<&'static str>,
}

impl<'s> PcNode<'s> {
    pub fn new(
        rfid: NodeAddress,
        slave_addr: u8,
        callback: impl Into<String>,
        epoch: NaiveDateTime,
        sink: &'s mut dyn DetectionSink,
        stats: Rc<RefCell<PcStats>>,
    ) -> Self {
        PcNode {
            rfid,
            slave_addr,
            callback: callback.into(),
            epoch,
            sink,
            stats,
            current_cmd: None,
        }
    }

    fn select_tag(&mut self, ctx: &mut Ctx<'_>) -> Result<Value, HandlerError> {
        let payload = codec::encode_write_payload(self.slave_addr, &CommandFrame::select_tag())?;
        self.current_cmd = Some(FN_SELECT_TAG);
        {
            let mut stats = self.stats.borrow_mut();
            stats.select_sent += 1;
            stats.last_payload = Some(payload.clone());
        }
        ctx.rpc_with_callback(
            self.rfid,
            &self.callback,
            FN_SEND_RECEIVE,
            vec![
                Value::Int(self.slave_addr as i64),
                Value::Bytes(payload),
                Value::Str(FN_SELECT_TAG.to_string()),
            ],
        )?;
        Ok(Value::None)
    }

    fn receive_result(&mut self, ctx: &mut Ctx<'_>, args: &[Value]) -> Result<Value, HandlerError> {
        if self.current_cmd != Some(FN_SELECT_TAG) {
            return Ok(Value::Bool(false));
        }
        let data = args.first().and_then(Value::as_str).unwrap_or("");
        let mut stats = self.stats.borrow_mut();
        match codec::legacy_hex_scan(data) {
            Ok(Response::Tag(resp)) => match codec::extract_tag(&resp) {
                Ok(tag) => {
                    let at = self.epoch + Duration::seconds(ctx.now().whole_secs() as i64);
                    self.sink.append_detection(at, &tag)?;
                    stats.detections += 1;
                    Ok(Value::Bool(true))
                }
                Err(e) => {
                    log::warn!("t={}: unusable tag response {data}: {e}", ctx.now());
                    stats.failed += 1;
                    Ok(Value::Bool(false))
                }
            },
            Ok(Response::NoTag { .. }) => {
                stats.no_tag += 1;
                Ok(Value::Bool(false))
            }
            Ok(Response::Frame(_)) | Err(_) => {
                log::debug!("t={}: no usable response ({data:?})", ctx.now());
                stats.failed += 1;
                Ok(Value::Bool(false))
            }
        }
    }
}

impl Script for PcNode<'_> {
    fn invoke(&mut self, ctx: &mut Ctx<'_>, function: &str, args: &[Value]) -> Result<Invocation, HandlerError> {
        let v = if function == FN_SELECT_TAG {
            self.select_tag(ctx)?
        } else if function == FN_RECEIVE_RESULT {
            self.receive_result(ctx, args)?
        } else {
            return Ok(Invocation::Unknown);
        };
        Ok(Invocation::Returned(v))
    }
}

/// Hosts the reader on its I²C bus.
pub struct RfidNode {
    pub device: Sm130,
}

impl RfidNode {
    fn send_receive(&mut self, ctx: &mut Ctx<'_>, args: &[Value]) -> Result<Value, HandlerError> {
        let (Some(slave), Some(frame)) = (
            args.first().and_then(Value::as_int),
            args.get(1).and_then(Value::as_bytes),
        ) else {
            return Err("sendReceiveCommand expects (slaveAddr, i2cFrame, cmdSent)".into());
        };
        self.device.i2c_write(frame, 1, true, ctx.now())?;
        let return_addr = (slave as u8) | 1;
        let read_size = self.device.config().read_size;
        match self.device.i2c_read(return_addr, read_size, 4, true) {
            Ok(bytes) => Ok(Value::Str(codec::to_hex(&bytes))),
            Err(I2cError::NoAck { .. }) => Ok(Value::Str(String::new())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Script for RfidNode {
    fn invoke(&mut self, ctx: &mut Ctx<'_>, function: &str, args: &[Value]) -> Result<Invocation, HandlerError> {
        if function != FN_SEND_RECEIVE {
            return Ok(Invocation::Unknown);
        }
        self.send_receive(ctx, args).map(Invocation::Returned)
    }
}
