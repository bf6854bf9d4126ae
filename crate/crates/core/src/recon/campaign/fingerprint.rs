//! Mechanism fingerprinting: SYN sweeps, redirect probing and scans.

use std::net::Ipv4Addr;

use super::{
    delta_between, effective_port, header_of, replies_since, send_probe, syn_probe, visible_len,
    AttackerEnv, CampaignOutput, Engine, EngineStep,
};
use crate::net::event::SimTime;
use crate::net::sim::Simulation;
use crate::net::types::{Packet, PacketHeader, PacketKind, TcpFlags};
use crate::net::PortId;
use crate::recon::classify::{classify_all, ClassifyParams};
use crate::recon::estimate::estimate_credit_params;
use crate::recon::probe::{
    detection_in_added, ObservationRecord, ProbeBatch, ProbeKind, ProbeTarget, ReplyEvent,
};


#[derive(Debug, Clone)]
pub struct FingerprintConfig {
    pub env: AttackerEnv,
    /// Run the self/dark/far SYN sweep (whitehole and delay fingerprints).
    pub syn_sweep: bool,
    /// Dark address for the whitehole check.
    pub dark_addr: Ipv4Addr,
    /// Responsive host used for the delay fingerprint.
    pub far_host: Option<Ipv4Addr>,
    /// Two destinations whose baseline ports may differ.
    pub redirect_dsts: Vec<Ipv4Addr>,
    pub flood_pps: f64,
    pub flood_secs: f64,
    /// All-responsive scan for the credit fingerprint, when configured.
    pub scan_targets: Vec<Ipv4Addr>,
    pub scan_rate_per_sec: f64,
    /// Spoofed high-failure scan for the detection fingerprint.
    pub dark_scan: Option<DarkScanConfig>,
    pub dst_port: u16,
    pub port_base: u16,
    pub probe_gap: SimTime,
    pub classify: ClassifyParams,
}

#[derive(Debug, Clone)]
pub struct DarkScanConfig {
    pub spoof_src: Ipv4Addr,
    pub dark_base: Ipv4Addr,
    pub count: usize,
    pub rate_per_sec: f64,
}

enum FingerprintState {
    SynSweep(usize),
    SynSettle,
    RedirectBaseline(usize),
    RedirectFlood,
    RedirectSettle,
    Scan(usize),
    ScanSettle,
    DarkScan(usize),
    DarkSettle,
    Finish,
}

/// First configured phase at or after `from`, in the fixed order redirect
/// probing (0), scan (1), dark scan (2), finish.
fn next_phase(cfg: &FingerprintConfig, from: u8) -> FingerprintState {
    if from == 0 && cfg.redirect_dsts.len() >= 2 {
        return FingerprintState::RedirectBaseline(0);
    }
    if from <= 1 && !cfg.scan_targets.is_empty() {
        return FingerprintState::Scan(0);
    }
    if from <= 2 && cfg.dark_scan.is_some() {
        return FingerprintState::DarkScan(0);
    }
    FingerprintState::Finish
}

pub struct FingerprintEngine {
    cfg: FingerprintConfig,
    state: FingerprintState,
    started: bool,
    // per-phase bookkeeping
    phase_sc_from: usize,
    phase_inbox_from: usize,
    phase_sent: Vec<SimTime>,
    phase_ports: Vec<u16>,
    phase_targets: Vec<ProbeTarget>,
    baseline_ports: Vec<(Ipv4Addr, PortId)>,
    redirect_headers: Vec<PacketHeader>,
    port_seq: u16,
}

impl FingerprintEngine {
    pub fn new(cfg: FingerprintConfig) -> Self {
        let state = if cfg.syn_sweep {
            FingerprintState::SynSweep(0)
        } else {
            next_phase(&cfg, 0)
        };
        FingerprintEngine {
            cfg,
            state,
            started: false,
            phase_sc_from: 0,
            phase_inbox_from: 0,
            phase_sent: Vec::new(),
            phase_ports: Vec::new(),
            phase_targets: Vec::new(),
            baseline_ports: Vec::new(),
            redirect_headers: Vec::new(),
            port_seq: 0,
        }
    }

    fn next_port(&mut self) -> u16 {
        let p = self.cfg.port_base + self.port_seq;
        self.port_seq += 1;
        p
    }

    fn open_phase(&mut self, sim: &Simulation) {
        self.phase_sc_from = sim.side_channel_log.len();
        self.phase_inbox_from = sim.attacker_inbox.len();
        self.phase_sent.clear();
        self.phase_ports.clear();
        self.phase_targets.clear();
    }

    fn syn_sweep_targets(&self) -> Vec<ProbeTarget> {
        let mut t = vec![
            ProbeTarget {
                dst: self.cfg.env.ip,
                dst_port: self.cfg.dst_port,
                expect_reply: false,
            },
            ProbeTarget {
                dst: self.cfg.dark_addr,
                dst_port: self.cfg.dst_port,
                expect_reply: false,
            },
        ];
        if let Some(far) = self.cfg.far_host {
            t.push(ProbeTarget {
                dst: far,
                dst_port: self.cfg.dst_port,
                expect_reply: true,
            });
        }
        t
    }

    /// Builds the record for the phase that just settled.
    fn close_phase(
        &mut self,
        sim: &Simulation,
        kind: ProbeKind,
        src: Ipv4Addr,
        with_ports: bool,
    ) -> ObservationRecord {
        let now = sim.now();
        let to = visible_len(sim, self.cfg.env.poll_interval, now);
        let delta = delta_between(sim, self.phase_sc_from, to);
        let replies_by_port = replies_since(sim, self.phase_inbox_from);
        let issued = self.phase_sent.len();
        let replies = (0..issued)
            .map(|i| {
                let reply_time = replies_by_port.get(&self.phase_ports[i]).copied();
                ReplyEvent {
                    probe_index: i,
                    replied: reply_time.is_some(),
                    reply_time,
                }
            })
            .collect();
        let detected = detection_in_added(&delta.added, src).is_some();
        let mut record = ObservationRecord::new(ProbeBatch {
            kind,
            src_ip: src,
            targets: self.phase_targets.clone(),
            rate_per_sec: 1.0,
            target_success_ratio: 0.0,
            seed: 0,
        });
        record.probe_sent = self.phase_sent.clone();
        record.probe_src_ports = self.phase_ports.clone();
        record.replies = replies;
        record.delta = delta;
        record.detected = detected;
        record.issued = issued;
        if with_ports {
            record.baseline_ports = self.baseline_ports.clone();
            record.post_ports = self
                .redirect_headers
                .iter()
                .map(|h| {
                    (
                        h.dst,
                        effective_port(sim, self.cfg.env.switch, h).unwrap_or(u32::MAX),
                    )
                })
                .collect();
        }
        record
    }

    fn send_sweep_probe(&mut self, sim: &mut Simulation, target: ProbeTarget) {
        let now = sim.now();
        let port = self.next_port();
        let flow = sim.next_flow_id();
        let packet = syn_probe(
            self.cfg.env.ip,
            target.dst,
            port,
            target.dst_port,
            flow,
            now,
        );
        self.phase_sent.push(now);
        self.phase_ports.push(port);
        self.phase_targets.push(target);
        send_probe(sim, &self.cfg.env, packet, now);
    }
}

impl Engine for FingerprintEngine {
    fn on_wake(&mut self, sim: &mut Simulation, out: &mut CampaignOutput) -> EngineStep {
        let now = sim.now();
        if !self.started {
            self.started = true;
            self.open_phase(sim);
        }
        loop {
            match self.state {
                FingerprintState::SynSweep(i) => {
                    let targets = self.syn_sweep_targets();
                    if i >= targets.len() {
                        self.state = FingerprintState::SynSettle;
                        return EngineStep::Continue(now + self.cfg.probe_gap);
                    }
                    self.send_sweep_probe(sim, targets[i]);
                    self.state = FingerprintState::SynSweep(i + 1);
                    return EngineStep::Continue(now + self.cfg.probe_gap);
                }
                FingerprintState::SynSettle => {
                    let record = self.close_phase(sim, ProbeKind::SynProbe, self.cfg.env.ip, false);
                    // whitehole: every probe answered, even dark and
                    // self-directed ones, with nothing installed
                    let all_replied =
                        record.issued > 0 && record.bitmap().iter().all(|&b| b);
                    let no_rules = record.delta.added.is_empty();
                    out.syn_proxy = Some(all_replied && no_rules);
                    out.records.push(record);
                    self.open_phase(sim);
                    self.state = next_phase(&self.cfg, 0);
                    return EngineStep::Continue(now + self.cfg.probe_gap);
                }
                FingerprintState::RedirectBaseline(i) => {
                    if i >= self.cfg.redirect_dsts.len() {
                        // read the ports the benign flows were given
                        self.baseline_ports = self
                            .redirect_headers
                            .iter()
                            .map(|h| {
                                (
                                    h.dst,
                                    effective_port(sim, self.cfg.env.switch, h)
                                        .unwrap_or(u32::MAX),
                                )
                            })
                            .collect();
                        let distinct = {
                            let mut ports: Vec<PortId> =
                                self.baseline_ports.iter().map(|(_, p)| *p).collect();
                            ports.sort_unstable();
                            ports.dedup();
                            ports.len() >= 2 && !ports.contains(&u32::MAX)
                        };
                        if distinct {
                            self.state = FingerprintState::RedirectFlood;
                            return EngineStep::Continue(now + self.cfg.probe_gap);
                        }
                        // no port-distinct pair: skip the flood
                        let record =
                            self.close_phase(sim, ProbeKind::RedirectProbe, self.cfg.env.ip, true);
                        out.records.push(record);
                        self.open_phase(sim);
                        self.state = next_phase(&self.cfg, 1);
                        return EngineStep::Continue(now + self.cfg.probe_gap);
                    }
                    let dst = self.cfg.redirect_dsts[i];
                    let target = ProbeTarget {
                        dst,
                        dst_port: self.cfg.dst_port,
                        expect_reply: true,
                    };
                    self.send_sweep_probe(sim, target);
                    let port = *self.phase_ports.last().expect("just sent");
                    self.redirect_headers
                        .push(header_of(self.cfg.env.ip, dst, port, self.cfg.dst_port));
                    self.state = FingerprintState::RedirectBaseline(i + 1);
                    return EngineStep::Continue(now + self.cfg.probe_gap);
                }
                FingerprintState::RedirectFlood => {
                    // high-profile traffic to both destinations, scheduled
                    // upfront at the configured rate
                    let spacing =
                        SimTime::from_micros((1e6 / self.cfg.flood_pps).round() as u64);
                    let count = (self.cfg.flood_pps * self.cfg.flood_secs).round() as u64;
                    for header in self.redirect_headers.clone() {
                        for i in 0..count {
                            let flow = sim.next_flow_id();
                            let mut packet = Packet::new(
                                PacketKind::TcpData,
                                header.src,
                                header.dst,
                                header.src_port,
                                header.dst_port,
                                1250,
                                flow,
                                now,
                            );
                            packet.header.tcp_flags = TcpFlags::ACK;
                            let at = now + SimTime::from_micros(i * spacing.micros());
                            send_probe(sim, &self.cfg.env, packet, at);
                        }
                    }
                    self.state = FingerprintState::RedirectSettle;
                    return EngineStep::Continue(
                        now + SimTime::from_secs_f64(self.cfg.flood_secs + 1.5),
                    );
                }
                FingerprintState::RedirectSettle => {
                    let record =
                        self.close_phase(sim, ProbeKind::RedirectProbe, self.cfg.env.ip, true);
                    out.records.push(record);
                    self.open_phase(sim);
                    self.state = next_phase(&self.cfg, 1);
                    return EngineStep::Continue(now + self.cfg.probe_gap);
                }
                FingerprintState::Scan(i) => {
                    if i >= self.cfg.scan_targets.len() {
                        self.state = FingerprintState::ScanSettle;
                        return EngineStep::Continue(now + SimTime::from_secs_f64(3.0));
                    }
                    let target = ProbeTarget {
                        dst: self.cfg.scan_targets[i],
                        dst_port: self.cfg.dst_port,
                        expect_reply: true,
                    };
                    self.send_sweep_probe(sim, target);
                    self.state = FingerprintState::Scan(i + 1);
                    let spacing =
                        SimTime::from_micros((1e6 / self.cfg.scan_rate_per_sec).round() as u64);
                    return EngineStep::Continue(now + spacing);
                }
                FingerprintState::ScanSettle => {
                    let mut record = self.close_phase(sim, ProbeKind::Scan, self.cfg.env.ip, false);
                    record.batch.rate_per_sec = self.cfg.scan_rate_per_sec;
                    record.batch.target_success_ratio = 1.0;
                    if out.bitmap.is_none() {
                        out.bitmap = Some(record.bitmap());
                    }
                    if out.credit_estimate.is_none() {
                        if let Ok(params) = estimate_credit_params(std::slice::from_ref(&record)) {
                            out.credit_estimate = Some(params);
                        }
                    }
                    out.records.push(record);
                    self.open_phase(sim);
                    self.state = next_phase(&self.cfg, 2);
                    return EngineStep::Continue(now + self.cfg.probe_gap);
                }
                FingerprintState::DarkScan(i) => {
                    let dark = self.cfg.dark_scan.clone().expect("state requires it");
                    // the batch is aborted as soon as detection is visible
                    let to = visible_len(sim, self.cfg.env.poll_interval, now);
                    let delta = delta_between(sim, self.phase_sc_from, to);
                    let seen = detection_in_added(&delta.added, dark.spoof_src).is_some();
                    if seen || i >= dark.count {
                        self.state = FingerprintState::DarkSettle;
                        return EngineStep::Continue(now + SimTime::from_secs_f64(2.5));
                    }
                    let dst = Ipv4Addr::from(u32::from(dark.dark_base) + i as u32 + 1);
                    let target = ProbeTarget {
                        dst,
                        dst_port: self.cfg.dst_port,
                        expect_reply: false,
                    };
                    let port = self.next_port();
                    let flow = sim.next_flow_id();
                    let packet = syn_probe(
                        dark.spoof_src,
                        dst,
                        port,
                        self.cfg.dst_port,
                        flow,
                        now,
                    );
                    self.phase_sent.push(now);
                    self.phase_ports.push(port);
                    self.phase_targets.push(target);
                    send_probe(sim, &self.cfg.env, packet, now);
                    self.state = FingerprintState::DarkScan(i + 1);
                    let spacing =
                        SimTime::from_micros((1e6 / dark.rate_per_sec).round() as u64);
                    return EngineStep::Continue(now + spacing);
                }
                FingerprintState::DarkSettle => {
                    let dark = self.cfg.dark_scan.clone().expect("state requires it");
                    let record = self.close_phase(sim, ProbeKind::Scan, dark.spoof_src, false);
                    out.records.push(record);
                    self.state = FingerprintState::Finish;
                }
                FingerprintState::Finish => {
                    out.mechanism = Some(classify_all(&out.records, &self.cfg.classify));
                    return EngineStep::Finished;
                }
            }
        }
    }
}
