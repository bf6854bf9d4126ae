//! Simulation time, the event queue and the trace.
//!
//! Time is integer microseconds so that event ordering and trace output are
//! exactly reproducible. Events at equal times fire in insertion order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::types::Packet;
use super::{HostId, PortId, SwitchId};

/// Simulation timestamp in microseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs_f64(secs: f64) -> Self {
        debug_assert!(secs >= 0.0);
        SimTime((secs * 1e6).round() as u64)
    }

    pub fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn micros(self) -> u64 {
        self.0
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl fmt::Display for SimTime {
    /// Seconds with six decimals, the format used in trace files.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Everything that can be scheduled on the event queue.
#[derive(Debug, Clone)]
pub enum Event {
    /// A packet arrives at a switch port.
    PacketAtSwitch {
        switch: SwitchId,
        port: PortId,
        packet: Packet,
    },
    /// A packet reaches a host NIC.
    DeliverToHost { host: HostId, packet: Packet },
    /// A pending connection reaches its reply deadline.
    PendingTimeout { src: Ipv4Addr, dst: Ipv4Addr },
    /// A deferred packet-in is re-evaluated (working-set delay).
    DeferredPacketIn {
        switch: SwitchId,
        port: PortId,
        packet: Packet,
    },
    /// Periodic controller poll of switch statistics.
    StatsTick,
    /// Rule-expiry check on one switch.
    ExpiryCheck { switch: SwitchId },
    /// The attacker campaign advances one step.
    AttackerWake { step: u64 },
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    /// Reversed so the `BinaryHeap` pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Deterministic priority queue of timed events.
#[derive(Debug, Default)]
pub struct EventScheduler {
    queue: BinaryHeap<Scheduled>,
    now: SimTime,
    seq: u64,
}

impl EventScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule(&mut self, time: SimTime, event: Event) {
        debug_assert!(time >= self.now, "scheduling into the past");
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Scheduled { time, seq, event });
    }

    /// Pops the next event with time <= `t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<(SimTime, Event)> {
        if self.queue.peek().is_none_or(|s| s.time > t_end) {
            return None;
        }
        let s = self.queue.pop().expect("peeked");
        self.now = s.time;
        Some((s.time, s.event))
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

/// Trace record kinds. One line per data- or control-plane event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Arrive,
    PacketIn,
    Forward,
    Deliver,
    Drop,
    SynAck,
    PacketOut,
    RuleInstall,
    RuleRemove,
    SilentDrop,
    Detection,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Arrive => "arrive",
            TraceKind::PacketIn => "packet_in",
            TraceKind::Forward => "forward",
            TraceKind::Deliver => "deliver",
            TraceKind::Drop => "drop",
            TraceKind::SynAck => "syn_ack",
            TraceKind::PacketOut => "packet_out",
            TraceKind::RuleInstall => "rule_install",
            TraceKind::RuleRemove => "rule_remove",
            TraceKind::SilentDrop => "silent_drop",
            TraceKind::Detection => "detection",
        }
    }
}

/// One trace line: `time,switch,event_kind,detail`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub switch: SwitchId,
    pub kind: TraceKind,
    pub detail: String,
}

/// Ordered log of simulation events.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, time: SimTime, switch: SwitchId, kind: TraceKind, detail: String) {
        self.records.push(TraceRecord {
            time,
            switch,
            kind,
            detail,
        });
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// CSV rendering: header row, UTF-8, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,switch,event_kind,detail\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.time,
                r.switch,
                r.kind.as_str(),
                r.detail
            ));
        }
        out
    }
}
