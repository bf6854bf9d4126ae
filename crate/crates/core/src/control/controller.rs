//! The controller: dispatches packet-in events through the policy pipeline
//! and answers with effects the simulator applies to the data plane.
//!
//! Pipeline order per packet-in: reply-outcome bookkeeping, blocked-source
//! check, TRW-CB first-contact accounting (TCP SYN only), access control,
//! then exactly one terminal routing decision (tenant routing, aggregation,
//! working-set delay or baseline forwarding). When obfuscation is active the
//! terminal decision is wrapped into a rewrite chain whose policy rule sits
//! at the k-th hop.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::access::AccessMatrix;
use super::aggregation::AggregationConfig;
use super::dos::{DosResponse, DosThresholdConfig};
use super::router;
use super::tenant;
use super::trwcb::{FirstContactDecision, Outcome, TrwCb, TrwCbConfig};
use super::working_set::{WorkingSetConfig, WorkingSets};
use crate::net::event::SimTime;
use crate::net::switch::FlowStatKey;
use crate::net::table::RuleSpec;
use crate::net::topology::Topology;
use crate::net::types::{Action, FlowKey, IpMatch, Packet, PacketHeader, PacketKind};
use crate::net::{PortId, SwitchId};
use crate::obfuscation::plan::{build_plan, plan_path, restore_actions, ObfuscationSettings, RewritePool};
use crate::obfuscation::RewriteLedger;

/// Which policy applications a scenario enables.
#[derive(Debug, Clone, Default)]
pub struct PolicySet {
    pub trwcb: Option<TrwCbConfig>,
    pub access: Option<AccessMatrix>,
    pub aggregation: Option<AggregationConfig>,
    pub working_set: Option<WorkingSetConfig>,
    pub dos: Option<DosThresholdConfig>,
    pub tenant_routing: bool,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub policies: PolicySet,
    pub stats_interval: SimTime,
    /// Timeouts stamped on routing rules; defense rules never expire.
    pub rule_idle_timeout: Option<SimTime>,
    pub rule_hard_timeout: Option<SimTime>,
    pub obfuscation: Option<ObfuscationSettings>,
    pub seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            policies: PolicySet::default(),
            stats_interval: SimTime::from_secs_f64(0.1),
            rule_idle_timeout: None,
            rule_hard_timeout: None,
            obfuscation: None,
            seed: 0,
        }
    }
}

/// Context the simulator hands over with each packet-in.
pub struct PacketInCtx<'a> {
    pub topo: &'a Topology,
    pub switch: SwitchId,
    pub ingress: PortId,
    pub packet: &'a Packet,
    pub now: SimTime,
    /// True when this is the re-evaluation of a deferred packet-in.
    pub deferred: bool,
    /// Windowed rate and cumulative bytes of this exact flow at the switch.
    pub flow_rate: f64,
    pub flow_cumulative: u64,
}

/// Per-switch statistics snapshot handed to the controller at stats ticks.
#[derive(Debug, Clone)]
pub struct StatsView {
    pub switch: SwitchId,
    /// (flow, windowed bytes/sec, cumulative bytes)
    pub flows: Vec<(FlowStatKey, f64, u64)>,
    /// (source, windowed packets/sec)
    pub srcs: Vec<(Ipv4Addr, f64)>,
}

/// What the controller asks the simulator to do.
#[derive(Debug, Clone)]
pub enum Effect {
    Install { switch: SwitchId, spec: RuleSpec },
    /// All-or-nothing install; rolled back on any table-full.
    InstallChain { rules: Vec<(SwitchId, RuleSpec)> },
    /// Run the triggering packet through the table again.
    Reprocess,
    /// Forward the triggering packet once, without installing anything.
    PacketOut { port: PortId },
    SilentDrop { reason: &'static str },
    Defer { delay: SimTime },
    ScheduleOutcomeTimeout { src: Ipv4Addr, dst: Ipv4Addr, at: SimTime },
    Detection { switch: SwitchId, detail: String },
}

/// Terminal routing decision before obfuscation wrapping.
enum Terminal {
    Install(RuleSpec),
    PacketOut(PortId),
    Defer(SimTime),
    /// reason, and whether the drop is a policy enforcement that obfuscation
    /// must delay to the k-th hop.
    SilentDrop(&'static str, bool),
}

#[derive(Debug, Clone)]
struct WsPendingInstall {
    switch: SwitchId,
    header: PacketHeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct FlowTuple(Ipv4Addr, Ipv4Addr, u16, u16);

impl FlowTuple {
    fn of(h: &PacketHeader) -> Self {
        FlowTuple(h.src, h.dst, h.src_port, h.dst_port)
    }
}

pub struct Controller {
    pub config: ControllerConfig,
    pub trwcb: Option<TrwCb>,
    working: WorkingSets,
    ws_pending_install: BTreeMap<(Ipv4Addr, Ipv4Addr), WsPendingInstall>,
    ws_deferred: BTreeSet<(Ipv4Addr, Ipv4Addr)>,
    /// Switch each source's traffic first entered through.
    src_ingress: BTreeMap<Ipv4Addr, SwitchId>,
    dos_handled: BTreeSet<(SwitchId, Ipv4Addr)>,
    escalated: BTreeSet<(SwitchId, FlowStatKey)>,
    wildcards: BTreeMap<SwitchId, Vec<IpMatch>>,
    pub ledger: RewriteLedger,
    pool: Option<RewritePool>,
    /// Flows whose policy-hop rule already exists; packet-ins beyond the
    /// policy hop get plain forwarding instead of a second chain.
    enforced: BTreeSet<FlowTuple>,
    rng: ChaCha8Rng,
    /// Control messages exchanged with the data plane (overhead accounting).
    pub messages: u64,
    pub detections: u64,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Self {
        let trwcb = config.policies.trwcb.clone().map(TrwCb::new);
        let pool = config
            .obfuscation
            .as_ref()
            .map(|o| RewritePool::new(o.rewrite_pool_cidr));
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x636f6e74726f6c);
        Controller {
            config,
            trwcb,
            working: WorkingSets::default(),
            ws_pending_install: BTreeMap::new(),
            ws_deferred: BTreeSet::new(),
            src_ingress: BTreeMap::new(),
            dos_handled: BTreeSet::new(),
            escalated: BTreeSet::new(),
            wildcards: BTreeMap::new(),
            ledger: RewriteLedger::default(),
            pool,
            enforced: BTreeSet::new(),
            rng,
            messages: 0,
            detections: 0,
        }
    }

    fn obfuscation_k(&self) -> u32 {
        self.config.obfuscation.as_ref().map_or(1, |o| o.k)
    }

    /// True when the controller wants periodic statistics ticks.
    pub fn wants_stats(&self) -> bool {
        self.config.policies.aggregation.is_some() || self.config.policies.dos.is_some()
    }

    fn routing_spec(&self, matcher: FlowKey, priority: u32, actions: Vec<Action>) -> RuleSpec {
        RuleSpec {
            matcher,
            priority,
            actions,
            idle_timeout: self.config.rule_idle_timeout,
            hard_timeout: self.config.rule_hard_timeout,
        }
    }

    pub fn handle_packet_in(&mut self, ctx: &PacketInCtx<'_>) -> Vec<Effect> {
        self.messages += 1;
        let header = ctx.packet.header;
        self.src_ingress.entry(header.src).or_insert(ctx.switch);

        let mut effects = Vec::new();
        self.observe_reply(ctx, &mut effects);

        if let Some(trw) = &self.trwcb {
            if trw.is_blocked(header.src) {
                effects.push(Effect::SilentDrop { reason: "blocked" });
                return effects;
            }
        }

        // First-contact accounting applies to connection requests only.
        if ctx.packet.kind == PacketKind::TcpSyn && !ctx.deferred {
            if let Some(trw) = &mut self.trwcb {
                if trw.is_first_contact(header.src, header.dst) {
                    let (decision, deadline) = trw.on_first_contact(header.src, header.dst, ctx.now);
                    match decision {
                        FirstContactDecision::Forward => {
                            effects.push(Effect::ScheduleOutcomeTimeout {
                                src: header.src,
                                dst: header.dst,
                                at: deadline.expect("forward carries a deadline"),
                            });
                        }
                        FirstContactDecision::SilentDrop => {
                            effects.push(Effect::SilentDrop { reason: "credit" });
                            return effects;
                        }
                    }
                }
            }
        }

        if let Some(matrix) = &self.config.policies.access {
            match matrix.allows(header.src, header.dst) {
                Ok(true) => {}
                Ok(false) => {
                    let terminal = Terminal::SilentDrop("access_denied", true);
                    self.apply_terminal(ctx, terminal, &mut effects);
                    return effects;
                }
                Err(_) => {
                    effects.push(Effect::SilentDrop {
                        reason: "unknown_subnet",
                    });
                    return effects;
                }
            }
        }

        let terminal = self.route_terminal(ctx);
        self.apply_terminal(ctx, terminal, &mut effects);
        effects
    }

    /// Resolves pending connection outcomes carried by replies.
    fn observe_reply(&mut self, ctx: &PacketInCtx<'_>, effects: &mut Vec<Effect>) {
        let header = ctx.packet.header;
        match ctx.packet.kind {
            PacketKind::TcpSynAck => {
                let initiator = header.dst;
                let responder = header.src;
                if let Some(trw) = &mut self.trwcb {
                    trw.on_outcome(initiator, responder, Outcome::Success);
                }
                if let Some(ws_cfg) = self.config.policies.working_set.clone() {
                    if self
                        .working
                        .resolve_reply(&ws_cfg, initiator, responder, ctx.now)
                    {
                        let pending = self
                            .ws_pending_install
                            .remove(&(initiator, responder))
                            .expect("awaiting entries carry their headers");
                        if let Ok(port) = ctx.topo.route_port(pending.switch, pending.header.dst) {
                            self.messages += 1;
                            effects.push(Effect::Install {
                                switch: pending.switch,
                                spec: self.routing_spec(
                                    FlowKey::exact_pair(&pending.header),
                                    router::BASELINE_PRIORITY,
                                    vec![Action::Forward(port)],
                                ),
                            });
                        }
                    }
                }
            }
            PacketKind::TcpRst => {
                let initiator = header.dst;
                let responder = header.src;
                let resolution = self
                    .trwcb
                    .as_mut()
                    .and_then(|trw| trw.on_outcome(initiator, responder, Outcome::Failure));
                if let Some(r) = resolution.filter(|r| r.detected) {
                    self.push_detection(initiator, r.outcome_index, effects);
                }
            }
            _ => {}
        }
    }

    /// Exactly one terminal routing decision per packet-in.
    fn route_terminal(&mut self, ctx: &PacketInCtx<'_>) -> Terminal {
        let header = ctx.packet.header;

        if self.config.policies.tenant_routing && header.tenant_tag.is_some() {
            return match tenant::tenant_route(ctx.topo, &header, ctx.switch, ctx.ingress) {
                Ok(route) => Terminal::Install(self.routing_spec(
                    FlowKey::exact_pair(&header),
                    router::BASELINE_PRIORITY,
                    vec![Action::Forward(route.out_port)],
                )),
                Err(_) => Terminal::SilentDrop("unknown_tenant", false),
            };
        }
        if self.config.policies.tenant_routing && header.tenant_tag.is_none() {
            return Terminal::SilentDrop("unknown_tenant", false);
        }

        if let Some(agg) = self.config.policies.aggregation.clone() {
            return self.aggregation_terminal(ctx, &agg);
        }

        if let Some(ws) = self.config.policies.working_set.clone() {
            return self.working_set_terminal(ctx, &ws);
        }

        match router::baseline_rule(ctx.topo, ctx.switch, &header) {
            Ok(spec) => Terminal::Install(self.routing_spec(spec.matcher, spec.priority, spec.actions)),
            Err(_) => Terminal::SilentDrop("no_route", false),
        }
    }

    fn aggregation_terminal(&mut self, ctx: &PacketInCtx<'_>, agg: &AggregationConfig) -> Terminal {
        let header = ctx.packet.header;
        let key = FlowStatKey::of(&header);
        let Ok(port) = ctx.topo.route_port(ctx.switch, header.dst) else {
            return Terminal::SilentDrop("no_route", false);
        };
        let escalate = self.escalated.contains(&(ctx.switch, key))
            || agg.over_threshold(ctx.flow_rate, ctx.flow_cumulative);
        if escalate {
            self.escalated.insert((ctx.switch, key));
            Terminal::Install(self.routing_spec(
                exact_flow_key(&key),
                router::EXACT_OVERRIDE_PRIORITY,
                vec![Action::Forward(port)],
            ))
        } else {
            let subnet = IpMatch::subnet(header.dst, agg.wildcard_prefix);
            self.wildcards
                .entry(ctx.switch)
                .or_default()
                .push(subnet);
            Terminal::Install(self.routing_spec(
                FlowKey {
                    dst: subnet,
                    ..FlowKey::any()
                },
                router::WILDCARD_PRIORITY,
                vec![Action::Forward(port)],
            ))
        }
    }

    fn working_set_terminal(&mut self, ctx: &PacketInCtx<'_>, ws: &WorkingSetConfig) -> Terminal {
        let header = ctx.packet.header;
        let pair = (header.src, header.dst);
        let Ok(port) = ctx.topo.route_port(ctx.switch, header.dst) else {
            return Terminal::SilentDrop("no_route", false);
        };
        if ctx.packet.kind != PacketKind::TcpSyn {
            // replies and data are relayed; rules appear only after a
            // positive reply admits the destination
            return Terminal::PacketOut(port);
        }
        if self.working.contains(ws, header.src, header.dst, ctx.now) {
            return Terminal::Install(self.routing_spec(
                FlowKey::exact_pair(&header),
                router::BASELINE_PRIORITY,
                vec![Action::Forward(port)],
            ));
        }
        if ctx.deferred {
            self.ws_deferred.remove(&pair);
            self.working
                .mark_awaiting_reply(header.src, header.dst, ctx.now);
            self.ws_pending_install.insert(
                pair,
                WsPendingInstall {
                    switch: ctx.switch,
                    header,
                },
            );
            return Terminal::PacketOut(port);
        }
        if self.ws_deferred.contains(&pair) || self.working.is_awaiting(header.src, header.dst) {
            // duplicate request inside the withholding window
            return Terminal::SilentDrop("withheld", false);
        }
        self.ws_deferred.insert(pair);
        Terminal::Defer(ws.install_delay())
    }

    /// Applies the terminal decision, wrapping it into a rewrite chain when
    /// obfuscation is active.
    fn apply_terminal(&mut self, ctx: &PacketInCtx<'_>, terminal: Terminal, effects: &mut Vec<Effect>) {
        let k = self.obfuscation_k();
        let header = ctx.packet.header;

        match terminal {
            Terminal::PacketOut(port) => {
                self.messages += 1;
                effects.push(Effect::PacketOut { port });
            }
            Terminal::Defer(delay) => effects.push(Effect::Defer { delay }),
            Terminal::SilentDrop(reason, enforce_at_k) => {
                if k >= 2 && enforce_at_k {
                    // policy drops are delayed to the k-th hop so the
                    // ingress switch reveals nothing
                    self.install_chain(ctx, &header, None, effects);
                } else {
                    effects.push(Effect::SilentDrop { reason });
                }
            }
            Terminal::Install(spec) => {
                if k < 2 {
                    self.messages += 1;
                    effects.push(Effect::Install {
                        switch: ctx.switch,
                        spec,
                    });
                    effects.push(Effect::Reprocess);
                } else if self.enforced.contains(&FlowTuple::of(&header)) {
                    // beyond the policy hop: plain forwarding
                    self.messages += 1;
                    effects.push(Effect::Install {
                        switch: ctx.switch,
                        spec,
                    });
                    effects.push(Effect::Reprocess);
                } else {
                    self.install_chain(ctx, &header, Some(spec), effects);
                }
            }
        }
    }

    /// Builds and installs the k-hop chain. `policy` carries the rule the
    /// unobfuscated pipeline would have installed; `None` means the flow is
    /// dropped at the policy hop.
    fn install_chain(
        &mut self,
        ctx: &PacketInCtx<'_>,
        header: &PacketHeader,
        policy: Option<RuleSpec>,
        effects: &mut Vec<Effect>,
    ) {
        let k = self.obfuscation_k();
        let path = match plan_path(ctx.topo, ctx.switch, k, &mut self.rng) {
            Ok(p) => p,
            Err(_) => {
                effects.push(Effect::SilentDrop {
                    reason: "path_too_short",
                });
                return;
            }
        };
        let pool = self.pool.as_mut().expect("obfuscation configured");
        let plan = build_plan(ctx.topo, &path, header, ctx.ingress, router::BASELINE_PRIORITY, pool);
        let policy_hop = plan.policy_hop();

        let policy_spec = match policy {
            None => self.routing_spec(FlowKey::exact_pair(&plan.policy_header), router::BASELINE_PRIORITY, Vec::new()),
            Some(spec) => {
                let mut actions = restore_actions(header);
                for action in spec.actions {
                    match action {
                        Action::Forward(_) => {
                            let Ok(port) = ctx.topo.route_port(policy_hop, header.dst) else {
                                effects.push(Effect::SilentDrop { reason: "no_route" });
                                return;
                            };
                            actions.push(Action::Forward(port));
                        }
                        other => actions.push(other),
                    }
                }
                self.routing_spec(
                    FlowKey::exact_pair(&plan.policy_header),
                    spec.priority,
                    actions,
                )
            }
        };

        for (rewritten, original, hop) in &plan.ledger_entries {
            self.ledger.record(*rewritten, *original, *hop);
        }
        self.enforced.insert(FlowTuple::of(header));

        let mut rules = plan.rewrite_rules;
        rules.push((policy_hop, policy_spec));
        self.messages += rules.len() as u64;
        effects.push(Effect::InstallChain { rules });
        effects.push(Effect::Reprocess);
    }

    /// A pending first contact timed out without a reply.
    pub fn handle_pending_timeout(
        &mut self,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        now: SimTime,
    ) -> Vec<Effect> {
        let mut effects = Vec::new();
        let Some(trw) = &mut self.trwcb else {
            return effects;
        };
        if !trw.due_pending(src, dst, now) {
            return effects;
        }
        let resolution = trw.on_outcome(src, dst, Outcome::Failure);
        if let Some(r) = resolution.filter(|r| r.detected) {
            self.push_detection(src, r.outcome_index, &mut effects);
        }
        effects
    }

    fn push_detection(&mut self, src: Ipv4Addr, outcome_index: u32, effects: &mut Vec<Effect>) {
        self.detections += 1;
        let switch = self.src_ingress.get(&src).copied().unwrap_or(1);
        effects.push(Effect::Detection {
            switch,
            detail: format!("trwcb;src={src};outcome={outcome_index}"),
        });
        if self.obfuscation_k() < 2 {
            // one drop rule for all traffic from the scanner
            self.messages += 1;
            effects.push(Effect::Install {
                switch,
                spec: RuleSpec::drop_rule(FlowKey::src_only(src), router::DEFENSE_PRIORITY),
            });
        }
    }

    /// Periodic statistics poll: aggregation escalation and DoS thresholds.
    pub fn handle_stats_tick(&mut self, views: &[StatsView], topo: &Topology) -> Vec<Effect> {
        let mut effects = Vec::new();
        for view in views {
            if let Some(agg) = self.config.policies.aggregation.clone() {
                for (key, rate, cumulative) in &view.flows {
                    if self.escalated.contains(&(view.switch, *key)) {
                        continue;
                    }
                    if !self.wildcard_covers(view.switch, key.dst) {
                        continue;
                    }
                    if agg.over_threshold(*rate, *cumulative) {
                        if let Ok(port) = topo.route_port(view.switch, key.dst) {
                            self.escalated.insert((view.switch, *key));
                            self.messages += 1;
                            effects.push(Effect::Install {
                                switch: view.switch,
                                spec: self.routing_spec(
                                    exact_flow_key(key),
                                    router::EXACT_OVERRIDE_PRIORITY,
                                    vec![Action::Forward(port)],
                                ),
                            });
                        }
                    }
                }
            }
            if let Some(dos) = self.config.policies.dos.clone() {
                for (src, pps) in &view.srcs {
                    if self.dos_handled.contains(&(view.switch, *src)) {
                        continue;
                    }
                    if !dos.over_threshold(*pps) {
                        continue;
                    }
                    self.dos_handled.insert((view.switch, *src));
                    self.detections += 1;
                    effects.push(Effect::Detection {
                        switch: view.switch,
                        detail: format!("dos;src={src};pps={pps:.0}"),
                    });
                    self.push_dos_response(&dos, view, *src, topo, &mut effects);
                }
            }
        }
        effects
    }

    fn push_dos_response(
        &mut self,
        dos: &DosThresholdConfig,
        view: &StatsView,
        src: Ipv4Addr,
        topo: &Topology,
        effects: &mut Vec<Effect>,
    ) {
        match dos.response {
            DosResponse::Filter => {
                self.messages += 1;
                effects.push(Effect::Install {
                    switch: view.switch,
                    spec: RuleSpec::drop_rule(FlowKey::src_only(src), router::DEFENSE_PRIORITY),
                });
            }
            DosResponse::RateLimit => {
                for (key, _, _) in view.flows.iter().filter(|(k, _, _)| k.src == src) {
                    if let Ok(port) = topo.route_port(view.switch, key.dst) {
                        self.messages += 1;
                        effects.push(Effect::Install {
                            switch: view.switch,
                            spec: RuleSpec::new(
                                exact_flow_key(key),
                                router::DEFENSE_PRIORITY,
                                vec![
                                    Action::RateLimit(dos.rate_limit_bytes_per_sec),
                                    Action::Forward(port),
                                ],
                            ),
                        });
                    }
                }
            }
            DosResponse::Redirect => {
                let honeypot = dos.honeypot_port.expect("validated");
                self.messages += 1;
                effects.push(Effect::Install {
                    switch: view.switch,
                    spec: RuleSpec::new(
                        FlowKey::src_only(src),
                        router::DEFENSE_PRIORITY,
                        vec![Action::Forward(honeypot)],
                    ),
                });
            }
        }
    }

    fn wildcard_covers(&self, switch: SwitchId, dst: Ipv4Addr) -> bool {
        self.wildcards
            .get(&switch)
            .is_some_and(|subnets| subnets.iter().any(|s| s.matches(dst)))
    }

    /// Ledger cleanup when a flow's rules are removed from a switch.
    pub fn note_rule_removed(&mut self, rule_matcher: &FlowKey) {
        if rule_matcher.src.is_exact() && rule_matcher.dst.is_exact() {
            let pair = (rule_matcher.src.addr, rule_matcher.dst.addr);
            if let Some(entry) = self.ledger.original_of(pair) {
                let original = entry.original;
                self.ledger.forget_flow(original);
            } else {
                self.ledger.forget_flow(pair);
            }
        }
    }
}

fn exact_flow_key(key: &FlowStatKey) -> FlowKey {
    FlowKey {
        src: IpMatch::exact(key.src),
        dst: IpMatch::exact(key.dst),
        proto: None,
        src_port: Some(key.src_port),
        dst_port: Some(key.dst_port),
        tcp_flags: None,
        ingress_port: None,
        tenant_tag: None,
    }
}
