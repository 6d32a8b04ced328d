//! Discrete-event virtual network.
//!
//! Nodes are identified by 3-byte addresses and expose named functions. An
//! RPC is delivered after a per-hop delay (zero, or uniform on
//! `[0, jitter_max]` from a seeded generator). Events fire in time order;
//! events at the same instant fire in the order they were scheduled.

pub mod nodes;
pub mod sim;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clock::{Pacer, SimTime};

pub type HandlerError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("address {0} is already registered")]
    DuplicateAddress(NodeAddress),
    #[error("no node at address {0}")]
    UnknownAddress(NodeAddress),
    #[error("node {addr} has no function {function:?}")]
    UnknownFunction { addr: NodeAddress, function: String },
    #[error("{function} on {addr} failed: {source}")]
    Handler {
        addr: NodeAddress,
        function: String,
        #[source]
        source: HandlerError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeAddress(pub [u8; 3]);

impl NodeAddress {
    pub const fn new(a: u8, b: u8, c: u8) -> Self {
        NodeAddress([a, b, c])
    }
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.0;
        write!(f, "{a:02X}:{b:02X}:{c:02X}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid node address {0:?}: expected AA:BB:CC")]
pub struct ParseAddressError(String);

impl FromStr for NodeAddress {
    type Err = ParseAddressError;

    /// Accepts `AA:BB:CC` or six bare hex digits.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseAddressError(s.to_string());
        let digits: String = if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 3 || parts.iter().any(|p| p.len() != 2) {
                return Err(bad());
            }
            parts.concat()
        } else {
            s.to_string()
        };
        if digits.len() != 6 {
            return Err(bad());
        }
        let bytes = hex::decode(&digits).map_err(|_| bad())?;
        Ok(NodeAddress([bytes[0], bytes[1], bytes[2]]))
    }
}

/// RPC argument and return values: the three scalar kinds the node scripts
/// use, plus raw byte strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Str(String),
    Bytes(Vec<u8>),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyTo {
    pub addr: NodeAddress,
    pub callback: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpcMessage {
    pub src: NodeAddress,
    pub dest: NodeAddress,
    pub function: String,
    pub args: Vec<Value>,
    /// Present only for calls made with [`Ctx::rpc_with_callback`].
    pub reply_to: Option<ReplyTo>,
}

/// Handle for a message accepted for delivery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub id: u64,
}

pub enum Invocation {
    Returned(Value),
    Unknown,
}

/// A node's program: dispatches a function name to its behavior.
pub trait Script {
    fn invoke(
        &mut self,
        ctx: &mut Ctx<'_>,
        function: &str,
        args: &[Value],
    ) -> Result<Invocation, HandlerError>;
}

type Handler<'a> = Box<dyn FnMut(&mut Ctx<'_>, &[Value]) -> Result<Value, HandlerError> + 'a>;

/// A script assembled from named closures.
#[derive(Default)]
pub struct HandlerTable<'a> {
    handlers: BTreeMap<String, Handler<'a>>,
}

impl<'a> HandlerTable<'a> {
    pub fn new() -> Self {
        HandlerTable {
            handlers: BTreeMap::new(),
        }
    }

    pub fn with(
        mut self,
        name: &str,
        f: impl FnMut(&mut Ctx<'_>, &[Value]) -> Result<Value, HandlerError> + 'a,
    ) -> Self {
        self.handlers.insert(name.to_string(), Box::new(f));
        self
    }
}

impl Script for HandlerTable<'_> {
    fn invoke(
        &mut self,
        ctx: &mut Ctx<'_>,
        function: &str,
        args: &[Value],
    ) -> Result<Invocation, HandlerError> {
        match self.handlers.get_mut(function) {
            Some(h) => h(ctx, args).map(Invocation::Returned),
            None => Ok(Invocation::Unknown),
        }
    }
}

enum Outgoing {
    Rpc(RpcMessage),
    Timer { after: SimTime, function: String },
}

/// What a running handler can see and do.
pub struct Ctx<'n> {
    now: SimTime,
    me: NodeAddress,
    known: &'n BTreeSet<NodeAddress>,
    next_id: &'n mut u64,
    outbox: Vec<Outgoing>,
}

impl Ctx<'_> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn me(&self) -> NodeAddress {
        self.me
    }

    fn send(&mut self, msg: RpcMessage) -> Result<Receipt, NetError> {
        if !self.known.contains(&msg.dest) {
            return Err(NetError::UnknownAddress(msg.dest));
        }
        let id = *self.next_id;
        *self.next_id += 1;
        self.outbox.push(Outgoing::Rpc(msg));
        Ok(Receipt { id })
    }

    /// Fire-and-forget call.
    pub fn rpc(&mut self, dest: NodeAddress, function: &str, args: Vec<Value>) -> Result<Receipt, NetError> {
        self.send(RpcMessage {
            src: self.me,
            dest,
            function: function.to_string(),
            args,
            reply_to: None,
        })
    }

    /// Calls `remote_fn` on `dest`; its return value comes back as a call to
    /// `callback` on this node.
    pub fn rpc_with_callback(
        &mut self,
        dest: NodeAddress,
        callback: &str,
        remote_fn: &str,
        args: Vec<Value>,
    ) -> Result<Receipt, NetError> {
        self.send(RpcMessage {
            src: self.me,
            dest,
            function: remote_fn.to_string(),
            args,
            reply_to: Some(ReplyTo {
                addr: self.me,
                callback: callback.to_string(),
            }),
        })
    }

    /// Invokes `function` on this node after `after`, with no network hop.
    pub fn set_timer(&mut self, after: SimTime, function: &str) {
        self.outbox.push(Outgoing::Timer {
            after,
            function: function.to_string(),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Event {
    Deliver(RpcMessage),
    Timer { node: NodeAddress, function: String },
}

#[derive(Debug)]
struct Scheduled {
    at: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event, then the oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// One executed event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub at: SimTime,
    pub src: NodeAddress,
    pub dest: NodeAddress,
    pub function: String,
    pub args: Vec<Value>,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} {}->{} {}", self.at, self.src, self.dest, self.function)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub events: u64,
    pub delivered: u64,
    pub unknown_function: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Ran(SimTime),
    Idle,
}

pub struct Network<'a> {
    now: SimTime,
    seq: u64,
    next_id: u64,
    queue: BinaryHeap<Scheduled>,
    nodes: BTreeMap<NodeAddress, Box<dyn Script + 'a>>,
    known: BTreeSet<NodeAddress>,
    jitter_max: SimTime,
    rng: ChaCha8Rng,
    trace: Option<Vec<TraceRecord>>,
    stats: NetStats,
}

impl<'a> Network<'a> {
    pub fn new(jitter_max: SimTime, seed: u64) -> Self {
        Network {
            now: SimTime::ZERO,
            seq: 0,
            next_id: 0,
            queue: BinaryHeap::new(),
            nodes: BTreeMap::new(),
            known: BTreeSet::new(),
            jitter_max,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: None,
            stats: NetStats::default(),
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn register(&mut self, addr: NodeAddress, script: impl Script + 'a) -> Result<(), NetError> {
        if !self.known.insert(addr) {
            return Err(NetError::DuplicateAddress(addr));
        }
        self.nodes.insert(addr, Box::new(script));
        Ok(())
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|s| s.at)
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn hop_delay(&mut self) -> SimTime {
        if self.jitter_max.is_zero() {
            SimTime::ZERO
        } else {
            SimTime::from_micros(self.rng.gen_range(0..=self.jitter_max.as_micros()))
        }
    }

    fn schedule(&mut self, at: SimTime, event: Event) {
        self.queue.push(Scheduled {
            at,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    fn enqueue(&mut self, msg: RpcMessage) -> Receipt {
        let id = self.next_id;
        self.next_id += 1;
        let at = self.now + self.hop_delay();
        self.schedule(at, Event::Deliver(msg));
        Receipt { id }
    }

    /// Injects a call from outside any handler.
    pub fn rpc(
        &mut self,
        src: NodeAddress,
        dest: NodeAddress,
        function: &str,
        args: Vec<Value>,
    ) -> Result<Receipt, NetError> {
        if !self.known.contains(&dest) {
            return Err(NetError::UnknownAddress(dest));
        }
        Ok(self.enqueue(RpcMessage {
            src,
            dest,
            function: function.to_string(),
            args,
            reply_to: None,
        }))
    }

    pub fn rpc_with_callback(
        &mut self,
        src: NodeAddress,
        dest: NodeAddress,
        callback: &str,
        remote_fn: &str,
        args: Vec<Value>,
    ) -> Result<Receipt, NetError> {
        if !self.known.contains(&dest) {
            return Err(NetError::UnknownAddress(dest));
        }
        Ok(self.enqueue(RpcMessage {
            src,
            dest,
            function: remote_fn.to_string(),
            args,
            reply_to: Some(ReplyTo {
                addr: src,
                callback: callback.to_string(),
            }),
        }))
    }

    pub fn schedule_timer(&mut self, node: NodeAddress, at: SimTime, function: &str) -> Result<(), NetError> {
        if !self.known.contains(&node) {
            return Err(NetError::UnknownAddress(node));
        }
        self.schedule(
            at.max(self.now),
            Event::Timer {
                node,
                function: function.to_string(),
            },
        );
        Ok(())
    }

    /// Executes exactly one event.
    pub fn step(&mut self) -> Result<Step, NetError> {
        let Some(Scheduled { at, event, .. }) = self.queue.pop() else {
            return Ok(Step::Idle);
        };
        debug_assert!(at >= self.now);
        self.now = at;
        self.stats.events += 1;
        let (src, dest, function, args, reply_to) = match event {
            Event::Deliver(m) => (m.src, m.dest, m.function, m.args, m.reply_to),
            Event::Timer { node, function } => (node, node, function, Vec::new(), None),
        };
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord {
                at,
                src,
                dest,
                function: function.clone(),
                args: args.clone(),
            });
        }
        let Some(script) = self.nodes.get_mut(&dest) else {
            return Err(NetError::UnknownAddress(dest));
        };
        let mut ctx = Ctx {
            now: at,
            me: dest,
            known: &self.known,
            next_id: &mut self.next_id,
            outbox: Vec::new(),
        };
        let outcome = script.invoke(&mut ctx, &function, &args);
        let outbox = ctx.outbox;
        let result = match outcome {
            Ok(Invocation::Returned(v)) => {
                self.stats.delivered += 1;
                Some(v)
            }
            Ok(Invocation::Unknown) => {
                let e = NetError::UnknownFunction {
                    addr: dest,
                    function: function.clone(),
                };
                log::warn!("t={at} from {src}: {e}; message dropped");
                self.stats.unknown_function += 1;
                None
            }
            Err(source) => {
                return Err(NetError::Handler {
                    addr: dest,
                    function,
                    source,
                })
            }
        };
        for out in outbox {
            match out {
                Outgoing::Rpc(msg) => {
                    let delay = self.hop_delay();
                    self.schedule(at + delay, Event::Deliver(msg));
                }
                Outgoing::Timer { after, function } => {
                    self.schedule(at + after, Event::Timer { node: dest, function });
                }
            }
        }
        if let (Some(value), Some(reply)) = (result, reply_to) {
            if self.known.contains(&reply.addr) {
                let delay = self.hop_delay();
                self.schedule(
                    at + delay,
                    Event::Deliver(RpcMessage {
                        src: dest,
                        dest: reply.addr,
                        function: reply.callback,
                        args: vec![value],
                        reply_to: None,
                    }),
                );
            }
        }
        Ok(Step::Ran(at))
    }

    /// Runs every event scheduled strictly before `horizon`, waiting on
    /// `pacer` before each one.
    pub fn run_until(&mut self, horizon: SimTime, pacer: &mut dyn Pacer) -> Result<(), NetError> {
        while let Some(next) = self.peek_time() {
            if next >= horizon {
                break;
            }
            pacer.wait_until(next);
            self.step()?;
        }
        Ok(())
    }
}
