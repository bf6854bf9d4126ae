//! Attacker campaigns: state machines that inject probe traffic, watch the
//! side-channel, and assemble observation records.
//!
//! Campaigns run inside the simulation's event loop through scheduled wake
//! events. Every decision is driven by the probe schedule and the rule
//! events observed so far, so runs are deterministic per seed.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::rc::Rc;

use crate::control::AccessMatrix;
use crate::net::event::SimTime;
use crate::net::sim::{AttackerDriver, RuleChange, Simulation};
use crate::net::table;
use crate::net::types::{IpProto, Packet, PacketHeader, PacketKind, TcpFlags};
use crate::net::{HostId, PortId, SwitchId};
use crate::recon::estimate::BoundaryEstimate;
use crate::recon::probe::{ObservationRecord, RuleDelta};
use crate::recon::report::Mechanism;

mod coresidency;
mod fingerprint;
mod matrix;
mod ramp;
mod scans;

pub use coresidency::{CoResidencyConfig, CoResidencyEngine};
pub use fingerprint::{DarkScanConfig, FingerprintConfig, FingerprintEngine};
pub use matrix::{AccessMatrixConfig, AccessMatrixEngine};
pub use ramp::{AggregationRampConfig, AggregationRampEngine};
pub use scans::{
    BoundaryScanConfig, BoundaryScanEngine, CreditProbeConfig, CreditProbeEngine,
    RawBatchesConfig, RawBatchesEngine,
};

/// Where the attacker sits in the topology.
#[derive(Debug, Clone, Copy)]
pub struct AttackerEnv {
    pub host: HostId,
    pub ip: Ipv4Addr,
    pub switch: SwitchId,
    pub port: PortId,
    /// Side-channel poll interval; zero means event-driven visibility.
    pub poll_interval: SimTime,
}

/// Per-batch bookkeeping surfaced to figures.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct BatchStat {
    pub index: usize,
    pub issued: usize,
    pub responses: usize,
    pub success_ratio: f64,
    pub failed_ratio: f64,
    pub detected: bool,
}

/// Everything a campaign learned; read by the experiment runner after the
/// simulation finishes.
#[derive(Debug, Default)]
pub struct CampaignOutput {
    pub records: Vec<ObservationRecord>,
    pub bitmap: Option<Vec<bool>>,
    pub credit_estimate: Option<(u32, u32)>,
    pub boundary: Option<BoundaryEstimate>,
    pub matrix: Option<AccessMatrix>,
    pub mechanism: Option<Mechanism>,
    pub aggregation_threshold_bytes_per_sec: Option<f64>,
    pub aggregation_cumulative_bytes: Option<u64>,
    pub co_resident: Option<bool>,
    pub syn_proxy: Option<bool>,
    pub stealth_violated: bool,
    pub batch_stats: Vec<BatchStat>,
    pub notes: Vec<String>,
    pub finished: bool,
}

pub type SharedOutput = Rc<RefCell<CampaignOutput>>;

/// One step of an engine: keep going at a given time, or done.
pub enum EngineStep {
    Continue(SimTime),
    Finished,
}

/// A campaign phase. The first `on_wake` call starts it.
pub trait Engine {
    fn on_wake(&mut self, sim: &mut Simulation, out: &mut CampaignOutput) -> EngineStep;
}

/// Adapter that owns an engine and drives it from attacker wake events.
pub struct EngineDriver {
    engine: Box<dyn Engine>,
    out: SharedOutput,
    token: u64,
}

impl EngineDriver {
    pub fn new(engine: Box<dyn Engine>, out: SharedOutput) -> Self {
        EngineDriver {
            engine,
            out,
            token: 0,
        }
    }

    /// Schedules the first wake.
    pub fn start(sim: &mut Simulation, at: SimTime) {
        sim.schedule_wake(at, 0);
    }
}

impl AttackerDriver for EngineDriver {
    fn wake(&mut self, sim: &mut Simulation, step: u64) {
        if step != self.token {
            return; // stale wake from an earlier schedule
        }
        let mut out = self.out.borrow_mut();
        match self.engine.on_wake(sim, &mut out) {
            EngineStep::Continue(at) => {
                self.token += 1;
                sim.schedule_wake(at, self.token);
            }
            EngineStep::Finished => out.finished = true,
        }
    }
}

/// Runs engines one after another, a second apart.
pub struct SequenceEngine {
    engines: Vec<Box<dyn Engine>>,
    current: usize,
}

impl SequenceEngine {
    pub fn new(engines: Vec<Box<dyn Engine>>) -> Self {
        SequenceEngine {
            engines,
            current: 0,
        }
    }
}

impl Engine for SequenceEngine {
    fn on_wake(&mut self, sim: &mut Simulation, out: &mut CampaignOutput) -> EngineStep {
        let Some(engine) = self.engines.get_mut(self.current) else {
            return EngineStep::Finished;
        };
        match engine.on_wake(sim, out) {
            EngineStep::Continue(at) => EngineStep::Continue(at),
            EngineStep::Finished => {
                self.current += 1;
                if self.current < self.engines.len() {
                    EngineStep::Continue(sim.now() + SimTime::from_secs_f64(1.0))
                } else {
                    EngineStep::Finished
                }
            }
        }
    }
}

/// Rule events visible to the attacker at `now`: everything under
/// event-driven visibility, or only events up to the last poll instant when
/// a poll interval is set.
fn visible_len(sim: &Simulation, poll: SimTime, now: SimTime) -> usize {
    if poll == SimTime::ZERO {
        return sim.side_channel_log.len();
    }
    let cutoff = SimTime::from_micros((now.micros() / poll.micros().max(1)) * poll.micros());
    sim.side_channel_log
        .iter()
        .take_while(|e| e.time <= cutoff)
        .count()
}

fn delta_between(sim: &Simulation, from: usize, to: usize) -> RuleDelta {
    let mut delta = RuleDelta::default();
    for event in &sim.side_channel_log[from..to] {
        match event.change {
            RuleChange::Added => delta
                .added
                .push((event.time, event.switch, event.rule.clone())),
            RuleChange::Removed => delta
                .removed
                .push((event.time, event.switch, event.rule.clone())),
        }
    }
    delta
}

fn syn_probe(
    src: Ipv4Addr,
    dst: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    flow_id: u64,
    now: SimTime,
) -> Packet {
    Packet::new(PacketKind::TcpSyn, src, dst, src_port, dst_port, 60, flow_id, now)
}

fn send_probe(sim: &mut Simulation, env: &AttackerEnv, packet: Packet, at: SimTime) {
    let host = env.host;
    sim.send_from_host(host, packet, at);
}

fn header_of(src: Ipv4Addr, dst: Ipv4Addr, src_port: u16, dst_port: u16) -> PacketHeader {
    PacketHeader {
        src,
        dst,
        proto: IpProto::Tcp,
        src_port,
        dst_port,
        tcp_flags: TcpFlags::SYN,
        tenant_tag: None,
    }
}

/// Output port the monitored table currently applies to a flow.
fn effective_port(sim: &Simulation, switch: SwitchId, header: &PacketHeader) -> Option<PortId> {
    let rules = sim.snapshot(switch).ok()?;
    let id = table::best_match(rules.iter(), header, 0)?;
    rules
        .iter()
        .find(|r| r.rule_id == id)
        .and_then(|r| r.output_port())
}

/// Replies delivered to the attacker since a cursor, keyed by destination
/// port (each probe owns a distinct source port).
fn replies_since(sim: &Simulation, from: usize) -> BTreeMap<u16, SimTime> {
    let mut map = BTreeMap::new();
    for (t, packet) in &sim.attacker_inbox[from..] {
        if packet.kind == PacketKind::TcpSynAck {
            map.entry(packet.header.dst_port).or_insert(*t);
        }
    }
    map
}

/// Groups snapshot rules by the tenant tag they match on.
pub fn read_tenant_rules(
    rules: &[crate::net::table::FlowRule],
) -> BTreeMap<Option<u16>, Vec<&crate::net::table::FlowRule>> {
    let mut groups: BTreeMap<Option<u16>, Vec<&crate::net::table::FlowRule>> = BTreeMap::new();
    for rule in rules {
        groups.entry(rule.matcher.tenant_tag).or_default().push(rule);
    }
    groups
}
