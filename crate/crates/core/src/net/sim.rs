//! The deterministic event loop: packets, switches, the controller and the
//! attacker driver all advance through one queue.

use std::collections::{BTreeMap, BTreeSet};

use super::event::{Event, EventScheduler, SimTime, Trace, TraceKind};
use super::switch::{FlowStatKey, Switch};
use super::table::{FlowRule, MatchOutcome, RuleSpec};
use super::topology::{PortPeer, Topology};
use super::types::{Action, Packet, PacketKind};
use super::{HostId, PortId, SwitchId};
use crate::control::controller::{Controller, Effect, PacketInCtx, StatsView};
use crate::error::NetError;

/// A packet injected by the attacker, recorded so runs can be replayed with
/// the side-channel detached. The schedule instant is kept so a replay can
/// issue the injection at the same point in the event order.
#[derive(Debug, Clone)]
pub struct Injection {
    /// When the attacker issued the send.
    pub scheduled_at: SimTime,
    /// When the packet reaches the switch port.
    pub time: SimTime,
    pub switch: SwitchId,
    pub port: PortId,
    pub packet: Packet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleChange {
    Added,
    Removed,
}

/// A flow-table change observed through the side-channel.
#[derive(Debug, Clone)]
pub struct RuleEvent {
    pub time: SimTime,
    pub switch: SwitchId,
    pub change: RuleChange,
    pub rule: FlowRule,
}

/// The attacker's hook into the event loop. Implementations inject packets
/// and read side-channel state, then schedule their next wake.
pub trait AttackerDriver {
    fn wake(&mut self, sim: &mut Simulation, step: u64);
}

pub struct Simulation {
    scheduler: EventScheduler,
    pub switches: BTreeMap<SwitchId, Switch>,
    pub topology: Topology,
    pub controller: Controller,
    pub trace: Trace,
    /// Switches the attacker holds side-channels on.
    pub monitored: BTreeSet<SwitchId>,
    side_channel_attached: bool,
    /// Rule events on monitored switches, in order. Empty when detached.
    pub side_channel_log: Vec<RuleEvent>,
    /// Packets delivered to the attacker host.
    pub attacker_inbox: Vec<(SimTime, Packet)>,
    pub attacker_host: Option<HostId>,
    pub injections: Vec<Injection>,
    record_injections: bool,
    driver: Option<Box<dyn AttackerDriver>>,
    expiry_scheduled: BTreeMap<SwitchId, SimTime>,
    next_flow_id: u64,
}

impl Simulation {
    pub fn new(
        topology: Topology,
        switches: BTreeMap<SwitchId, Switch>,
        controller: Controller,
        monitored: BTreeSet<SwitchId>,
        attacker_host: Option<HostId>,
    ) -> Self {
        let mut sim = Simulation {
            scheduler: EventScheduler::new(),
            switches,
            topology,
            controller,
            trace: Trace::default(),
            monitored,
            side_channel_attached: true,
            side_channel_log: Vec::new(),
            attacker_inbox: Vec::new(),
            attacker_host,
            injections: Vec::new(),
            record_injections: true,
            driver: None,
            expiry_scheduled: BTreeMap::new(),
            next_flow_id: 1,
        };
        if sim.controller.wants_stats() {
            let at = sim.controller.config.stats_interval;
            sim.scheduler.schedule(at, Event::StatsTick);
        }
        sim
    }

    /// Detaches the side-channel and stops injection recording; used by the
    /// replay harness that feeds recorded injections back in.
    pub fn detach_side_channel(&mut self) {
        self.side_channel_attached = false;
        self.record_injections = false;
    }

    pub fn set_driver(&mut self, driver: Box<dyn AttackerDriver>) {
        self.driver = Some(driver);
    }

    pub fn take_driver(&mut self) -> Option<Box<dyn AttackerDriver>> {
        self.driver.take()
    }

    pub fn now(&self) -> SimTime {
        self.scheduler.now()
    }

    pub fn next_flow_id(&mut self) -> u64 {
        let id = self.next_flow_id;
        self.next_flow_id += 1;
        id
    }

    pub fn schedule_wake(&mut self, at: SimTime, step: u64) {
        self.scheduler.schedule(at, Event::AttackerWake { step });
    }

    /// Injects an attacker packet at a switch port at an absolute time. The
    /// injection is logged so the run can be replayed.
    pub fn inject(&mut self, time: SimTime, switch: SwitchId, port: PortId, packet: Packet) {
        if self.record_injections {
            self.injections.push(Injection {
                scheduled_at: self.now(),
                time,
                switch,
                port,
                packet: packet.clone(),
            });
        }
        self.schedule_arrival(time, switch, port, packet);
    }

    /// Schedules an arrival without logging it as an external injection.
    fn schedule_arrival(&mut self, time: SimTime, switch: SwitchId, port: PortId, packet: Packet) {
        self.scheduler.schedule(
            time,
            Event::PacketAtSwitch {
                switch,
                port,
                packet,
            },
        );
    }

    /// Sends a packet from a host; it reaches the attachment switch after
    /// the host's link latency.
    pub fn send_from_host(&mut self, host: HostId, packet: Packet, at: SimTime) {
        let h = self.topology.host(host);
        let (switch, port, latency) = (h.switch, h.port, h.latency);
        self.inject(at + latency, switch, port, packet);
    }

    /// Read-only copy of a switch's flow table.
    pub fn snapshot(&self, switch: SwitchId) -> Result<Vec<FlowRule>, NetError> {
        self.switches
            .get(&switch)
            .map(|s| s.table.snapshot())
            .ok_or(NetError::UnknownSwitch(switch))
    }

    /// Runs every event with time <= t_end, in deterministic order.
    pub fn run_until(&mut self, t_end: SimTime) -> &Trace {
        while let Some((_, event)) = self.scheduler.pop_until(t_end) {
            self.handle_event(event);
        }
        &self.trace
    }

    fn handle_event(&mut self, event: Event) {
        match event {
            Event::PacketAtSwitch {
                switch,
                port,
                packet,
            } => self.packet_at_switch(switch, port, packet, false),
            Event::DeliverToHost { host, packet } => self.deliver_to_host(host, packet),
            Event::PendingTimeout { src, dst } => {
                let now = self.now();
                let effects = self.controller.handle_pending_timeout(src, dst, now);
                self.apply_effects(None, effects);
            }
            Event::DeferredPacketIn {
                switch,
                port,
                packet,
            } => self.packet_in(switch, port, packet, true),
            Event::StatsTick => self.stats_tick(),
            Event::ExpiryCheck { switch } => self.expiry_check(switch),
            Event::AttackerWake { step } => {
                if let Some(mut driver) = self.driver.take() {
                    driver.wake(self, step);
                    if self.driver.is_none() {
                        self.driver = Some(driver);
                    }
                }
            }
        }
    }

    fn packet_at_switch(&mut self, switch: SwitchId, port: PortId, packet: Packet, reprocess: bool) {
        let now = self.now();
        if self.topology.peer(switch, port).is_none() || !self.switches.contains_key(&switch) {
            self.trace.push(
                now,
                switch,
                TraceKind::Drop,
                format!("unknown_port={port};{}", fmt_packet(&packet)),
            );
            return;
        }
        if !reprocess {
            let sw = self.switches.get_mut(&switch).expect("checked above");
            sw.record_arrival(&packet.header, packet.size, now);
            self.trace.push(
                now,
                switch,
                TraceKind::Arrive,
                format!("port={port};{}", fmt_packet(&packet)),
            );
        }

        // SYN-proxy answers connection requests that miss the table, without
        // involving the controller or installing anything.
        let proxied = {
            let sw = self.switches.get(&switch).expect("checked above");
            sw.syn_proxy_enabled
                && packet.kind == PacketKind::TcpSyn
                && sw.table.peek(&packet.header, port).is_none()
        };
        if proxied {
            let reply = packet.syn_ack_reply(now);
            self.trace.push(
                now,
                switch,
                TraceKind::SynAck,
                format!("port={port};{}", fmt_packet(&reply)),
            );
            self.emit_on_port(switch, port, reply);
            return;
        }

        let outcome = {
            let sw = self.switches.get_mut(&switch).expect("checked above");
            sw.table.lookup(&packet.header, port, packet.size, now)
        };

        match outcome {
            MatchOutcome::Miss => self.packet_in(switch, port, packet, false),
            MatchOutcome::Rule(id) => {
                let rule = self
                    .switches
                    .get(&switch)
                    .and_then(|s| s.table.get(id))
                    .expect("matched rule exists");
                let actions = rule.actions.clone();
                self.arm_expiry(switch);
                self.apply_actions(switch, port, packet, id, &actions);
            }
        }
    }

    fn apply_actions(
        &mut self,
        switch: SwitchId,
        ingress: PortId,
        packet: Packet,
        rule_id: u64,
        actions: &[Action],
    ) {
        let now = self.now();
        if actions.is_empty() || actions.contains(&Action::Drop) {
            self.trace.push(
                now,
                switch,
                TraceKind::Drop,
                format!("rule={rule_id};{}", fmt_packet(&packet)),
            );
            return;
        }
        let mut current = packet;
        let mut forwarded = false;
        for action in actions {
            match action {
                Action::SetField(write) => current.header.apply(*write),
                Action::Forward(port) => {
                    self.trace.push(
                        now,
                        switch,
                        TraceKind::Forward,
                        format!("rule={rule_id};port={port};{}", fmt_packet(&current)),
                    );
                    self.emit_on_port(switch, *port, current.clone());
                    forwarded = true;
                }
                Action::SendToController => {
                    self.packet_in(switch, ingress, current.clone(), false);
                    forwarded = true;
                }
                // rate limits are carried in the rule; the cap itself is not
                // modelled at packet granularity
                Action::RateLimit(_) => {}
                Action::Drop => unreachable!("handled above"),
            }
        }
        if !forwarded {
            self.trace.push(
                now,
                switch,
                TraceKind::Drop,
                format!("rule={rule_id};no_output;{}", fmt_packet(&current)),
            );
        }
    }

    /// Sends a packet out a port: across a link, to attached hosts, or into
    /// a stub subnet (where it vanishes).
    fn emit_on_port(&mut self, switch: SwitchId, port: PortId, packet: Packet) {
        let now = self.now();
        match self.topology.peer(switch, port).cloned() {
            Some(PortPeer::Switch {
                switch: next,
                port: next_port,
                latency,
            }) => {
                self.scheduler.schedule(
                    now + latency,
                    Event::PacketAtSwitch {
                        switch: next,
                        port: next_port,
                        packet,
                    },
                );
            }
            Some(PortPeer::Hosts(hosts)) => {
                for host in hosts {
                    if self.topology.host(host).ip == packet.header.dst {
                        let latency = self.topology.host(host).latency;
                        self.scheduler
                            .schedule(now + latency, Event::DeliverToHost { host, packet });
                        return;
                    }
                }
                // no host with that address behind the port: vanishes
            }
            Some(PortPeer::Stub) | None => {}
        }
    }

    fn deliver_to_host(&mut self, host: HostId, packet: Packet) {
        let now = self.now();
        let h = self.topology.host(host).clone();
        self.trace.push(
            now,
            h.switch,
            TraceKind::Deliver,
            format!("host={};{}", h.name, fmt_packet(&packet)),
        );
        if Some(host) == self.attacker_host {
            self.attacker_inbox.push((now, packet.clone()));
        }
        if h.responsive && packet.kind == PacketKind::TcpSyn {
            let reply = packet.syn_ack_reply(now);
            self.schedule_arrival(now + h.latency, h.switch, h.port, reply);
        }
    }

    fn packet_in(&mut self, switch: SwitchId, port: PortId, packet: Packet, deferred: bool) {
        let now = self.now();
        if !deferred {
            self.trace.push(
                now,
                switch,
                TraceKind::PacketIn,
                format!("port={port};{}", fmt_packet(&packet)),
            );
        }
        let (flow_rate, flow_cumulative) = match &self.controller.config.policies.aggregation {
            Some(agg) => {
                let sw = self.switches.get(&switch).expect("switch exists");
                let key = FlowStatKey::of(&packet.header);
                let window_us = (agg.rate_window_secs * 1e6).round() as u64;
                (
                    sw.flow_rate_bytes_per_sec(&key, now, window_us),
                    sw.cumulative_bytes(&key),
                )
            }
            None => (0.0, 0),
        };
        let effects = {
            let ctx = PacketInCtx {
                topo: &self.topology,
                switch,
                ingress: port,
                packet: &packet,
                now,
                deferred,
                flow_rate,
                flow_cumulative,
            };
            self.controller.handle_packet_in(&ctx)
        };
        self.apply_effects(Some((switch, port, packet)), effects);
    }

    fn apply_effects(&mut self, ctx: Option<(SwitchId, PortId, Packet)>, effects: Vec<Effect>) {
        let now = self.now();
        // when an install is rejected the packet must not be re-run through
        // the table, or a missing rule would loop forever
        let mut install_failed = false;
        for effect in effects {
            match effect {
                Effect::Install { switch, spec } => {
                    if self.install_rule(switch, spec).is_err() {
                        install_failed = true;
                    }
                }
                Effect::InstallChain { rules } => {
                    if !self.install_chain(rules) {
                        install_failed = true;
                    }
                }
                Effect::Reprocess => {
                    if install_failed {
                        continue;
                    }
                    if let Some((switch, port, packet)) = ctx.clone() {
                        self.packet_at_switch(switch, port, packet, true);
                    }
                }
                Effect::PacketOut { port } => {
                    if let Some((switch, _, packet)) = ctx.clone() {
                        self.trace.push(
                            now,
                            switch,
                            TraceKind::PacketOut,
                            format!("port={port};{}", fmt_packet(&packet)),
                        );
                        self.emit_on_port(switch, port, packet);
                    }
                }
                Effect::SilentDrop { reason } => {
                    if let Some((switch, _, packet)) = &ctx {
                        self.trace.push(
                            now,
                            *switch,
                            TraceKind::SilentDrop,
                            format!("reason={reason};{}", fmt_packet(packet)),
                        );
                    }
                }
                Effect::Defer { delay } => {
                    if let Some((switch, port, packet)) = ctx.clone() {
                        self.scheduler.schedule(
                            now + delay,
                            Event::DeferredPacketIn {
                                switch,
                                port,
                                packet,
                            },
                        );
                    }
                }
                Effect::ScheduleOutcomeTimeout { src, dst, at } => {
                    self.scheduler.schedule(at, Event::PendingTimeout { src, dst });
                }
                Effect::Detection { switch, detail } => {
                    self.trace.push(now, switch, TraceKind::Detection, detail);
                }
            }
        }
    }

    /// Installs one rule, tracing and reporting it through the side-channel.
    pub fn install_rule(&mut self, switch: SwitchId, spec: RuleSpec) -> Result<u64, NetError> {
        let now = self.now();
        let sw = self
            .switches
            .get_mut(&switch)
            .ok_or(NetError::UnknownSwitch(switch))?;
        match sw.table.install(switch, spec, now) {
            Ok(id) => {
                let rule = sw.table.get(id).expect("just installed").clone();
                self.trace.push(
                    now,
                    switch,
                    TraceKind::RuleInstall,
                    fmt_rule(&rule),
                );
                if self.side_channel_attached && self.monitored.contains(&switch) {
                    self.side_channel_log.push(RuleEvent {
                        time: now,
                        switch,
                        change: RuleChange::Added,
                        rule,
                    });
                }
                self.arm_expiry(switch);
                Ok(id)
            }
            Err(e) => {
                self.trace.push(
                    now,
                    switch,
                    TraceKind::Drop,
                    format!("table_full;capacity={}", sw.table.capacity()),
                );
                Err(e)
            }
        }
    }

    /// All-or-nothing install across switches; on a capacity miss nothing is
    /// installed and false is returned.
    fn install_chain(&mut self, rules: Vec<(SwitchId, RuleSpec)>) -> bool {
        let now = self.now();
        let mut demand: BTreeMap<SwitchId, usize> = BTreeMap::new();
        for (sw, _) in &rules {
            *demand.entry(*sw).or_insert(0) += 1;
        }
        for (sw_id, extra) in &demand {
            let Some(sw) = self.switches.get(sw_id) else {
                return false;
            };
            if sw.table.len() + extra > sw.table.capacity() {
                self.trace.push(
                    now,
                    *sw_id,
                    TraceKind::Drop,
                    format!("chain_table_full;capacity={}", sw.table.capacity()),
                );
                return false;
            }
        }
        for (sw, spec) in rules {
            self.install_rule(sw, spec).expect("capacity prechecked");
        }
        true
    }

    /// Removes expired rules and re-arms the check for the next deadline.
    fn expiry_check(&mut self, switch: SwitchId) {
        let now = self.now();
        self.expiry_scheduled.remove(&switch);
        let removed = match self.switches.get_mut(&switch) {
            Some(sw) => sw.table.expire(now),
            None => return,
        };
        for rule in removed {
            self.trace
                .push(now, switch, TraceKind::RuleRemove, fmt_rule(&rule));
            if self.side_channel_attached && self.monitored.contains(&switch) {
                self.side_channel_log.push(RuleEvent {
                    time: now,
                    switch,
                    change: RuleChange::Removed,
                    rule: rule.clone(),
                });
            }
            self.controller.note_rule_removed(&rule.matcher);
        }
        self.arm_expiry(switch);
    }

    /// Schedules (or re-schedules) the expiry check for a switch.
    fn arm_expiry(&mut self, switch: SwitchId) {
        let Some(sw) = self.switches.get(&switch) else {
            return;
        };
        let Some(deadline) = sw.table.next_expiry() else {
            return;
        };
        let now = self.now();
        let at = deadline.max(SimTime(now.0 + 1));
        match self.expiry_scheduled.get(&switch) {
            Some(existing) if *existing <= at => {}
            _ => {
                self.expiry_scheduled.insert(switch, at);
                self.scheduler.schedule(at, Event::ExpiryCheck { switch });
            }
        }
    }

    fn stats_tick(&mut self) {
        let now = self.now();
        let agg = self.controller.config.policies.aggregation.clone();
        let dos = self.controller.config.policies.dos.clone();
        let mut views = Vec::new();
        for (id, sw) in &self.switches {
            let mut flows = Vec::new();
            // flow-level stats feed aggregation escalation and the per-flow
            // DoS responses
            if agg.is_some() || dos.is_some() {
                let window_us = agg
                    .as_ref()
                    .map(|a| (a.rate_window_secs * 1e6).round() as u64)
                    .unwrap_or(500_000);
                for key in sw.flow_bytes.keys() {
                    flows.push((
                        *key,
                        sw.flow_rate_bytes_per_sec(key, now, window_us),
                        sw.cumulative_bytes(key),
                    ));
                }
            }
            let mut srcs = Vec::new();
            if let Some(dos) = &dos {
                for src in sw.src_packets.keys() {
                    srcs.push((*src, sw.src_packets_per_sec(*src, now, dos.window_us())));
                }
            }
            views.push(StatsView {
                switch: *id,
                flows,
                srcs,
            });
        }
        let effects = self.controller.handle_stats_tick(&views, &self.topology);
        self.apply_effects(None, effects);

        // bound ring growth; windows never look back further than 10 s
        let keep_from = now.micros().saturating_sub(10_000_000) / super::switch::STAT_BUCKET_US;
        for sw in self.switches.values_mut() {
            for ring in sw.flow_bytes.values_mut() {
                ring.prune_before(keep_from);
            }
            for ring in sw.src_packets.values_mut() {
                ring.prune_before(keep_from);
            }
        }

        if self.controller.wants_stats() {
            let at = now + self.controller.config.stats_interval;
            self.scheduler.schedule(at, Event::StatsTick);
        }
    }
}

pub fn fmt_packet(p: &Packet) -> String {
    let kind = match p.kind {
        PacketKind::TcpSyn => "syn",
        PacketKind::TcpSynAck => "synack",
        PacketKind::TcpData => "data",
        PacketKind::TcpRst => "rst",
        PacketKind::Udp => "udp",
        PacketKind::Icmp => "icmp",
    };
    let tenant = match p.header.tenant_tag {
        Some(t) => format!(";tenant={t}"),
        None => String::new(),
    };
    format!(
        "{}>{};{}({}){}",
        p.header.src, p.header.dst, kind, p.flow_id, tenant
    )
}

pub fn fmt_rule(rule: &FlowRule) -> String {
    let actions = if rule.actions.is_empty() {
        "drop".to_string()
    } else {
        rule.actions
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join("+")
    };
    format!(
        "rule={};prio={};match={};actions={}",
        rule.rule_id,
        rule.priority,
        rule.matcher.to_string().replace(' ', "_"),
        actions
    )
}
