//! Scan batches: the burst probe, explicit batch lists, and the
//! detection-boundary sweep.

use std::net::Ipv4Addr;

use super::{
    delta_between, replies_since, send_probe, syn_probe, visible_len, AttackerEnv, BatchStat,
    CampaignOutput, Engine, EngineStep,
};
use crate::net::event::SimTime;
use crate::net::sim::Simulation;
use crate::recon::classify::{classify_all, ClassifyParams};
use crate::recon::estimate::{estimate_credit_params, estimate_detection_boundary};
use crate::recon::probe::{
    detection_in_added, ObservationRecord, ProbeBatch, ProbeKind, ProbeTarget, ReplyEvent,
};


#[derive(Debug, Clone)]
pub struct CreditProbeConfig {
    pub env: AttackerEnv,
    pub rate_per_sec: f64,
    pub targets: Vec<Ipv4Addr>,
    pub dst_port: u16,
    pub port_base: u16,
    /// Settle time after the last probe before reading the results.
    pub settle: SimTime,
}

enum CreditState {
    Sending(usize),
    Finalize,
}

pub struct CreditProbeEngine {
    cfg: CreditProbeConfig,
    state: CreditState,
    sent: Vec<SimTime>,
    sc_from: Option<usize>,
    inbox_from: usize,
}

impl CreditProbeEngine {
    pub fn new(cfg: CreditProbeConfig) -> Self {
        CreditProbeEngine {
            cfg,
            state: CreditState::Sending(0),
            sent: Vec::new(),
            sc_from: None,
            inbox_from: 0,
        }
    }

    fn spacing(&self) -> SimTime {
        SimTime::from_micros((1e6 / self.cfg.rate_per_sec).round() as u64)
    }
}

impl Engine for CreditProbeEngine {
    fn on_wake(&mut self, sim: &mut Simulation, out: &mut CampaignOutput) -> EngineStep {
        let now = sim.now();
        if self.sc_from.is_none() {
            self.sc_from = Some(sim.side_channel_log.len());
            self.inbox_from = sim.attacker_inbox.len();
        }
        match self.state {
            CreditState::Sending(i) => {
                if self.cfg.targets.is_empty() {
                    // zero-length batch: produce an empty record
                    self.state = CreditState::Finalize;
                    return EngineStep::Continue(now + self.cfg.settle);
                }
                let dst = self.cfg.targets[i];
                let flow = sim.next_flow_id();
                let packet = syn_probe(
                    self.cfg.env.ip,
                    dst,
                    self.cfg.port_base + i as u16,
                    self.cfg.dst_port,
                    flow,
                    now,
                );
                send_probe(sim, &self.cfg.env, packet, now);
                self.sent.push(now);
                if i + 1 < self.cfg.targets.len() {
                    self.state = CreditState::Sending(i + 1);
                    EngineStep::Continue(now + self.spacing())
                } else {
                    self.state = CreditState::Finalize;
                    EngineStep::Continue(now + self.cfg.settle)
                }
            }
            CreditState::Finalize => {
                let sc_to = visible_len(sim, self.cfg.env.poll_interval, now);
                let delta = delta_between(sim, self.sc_from.unwrap(), sc_to);
                let replies_by_port = replies_since(sim, self.inbox_from);
                let issued = self.sent.len();
                let replies: Vec<ReplyEvent> = (0..issued)
                    .map(|i| {
                        let port = self.cfg.port_base + i as u16;
                        let reply_time = replies_by_port.get(&port).copied();
                        ReplyEvent {
                            probe_index: i,
                            replied: reply_time.is_some(),
                            reply_time,
                        }
                    })
                    .collect();
                let detected = detection_in_added(&delta.added, self.cfg.env.ip).is_some();
                let mut record = ObservationRecord::new(ProbeBatch {
                    kind: ProbeKind::Scan,
                    src_ip: self.cfg.env.ip,
                    targets: self
                        .cfg
                        .targets
                        .iter()
                        .map(|&dst| ProbeTarget {
                            dst,
                            dst_port: self.cfg.dst_port,
                            expect_reply: true,
                        })
                        .collect(),
                    rate_per_sec: self.cfg.rate_per_sec,
                    target_success_ratio: 1.0,
                    seed: 0,
                });
                record.probe_sent = self.sent.clone();
                record.probe_src_ports =
                    (0..issued).map(|i| self.cfg.port_base + i as u16).collect();
                record.replies = replies;
                record.delta = delta;
                record.detected = detected;
                record.issued = issued;

                let bitmap = record.bitmap();
                let responses = bitmap.iter().filter(|&&b| b).count();
                out.batch_stats.push(BatchStat {
                    index: out.batch_stats.len(),
                    issued,
                    responses,
                    success_ratio: record.success_ratio(),
                    failed_ratio: record.failed_ratio(),
                    detected,
                });
                out.bitmap = Some(bitmap);
                match estimate_credit_params(std::slice::from_ref(&record)) {
                    Ok(params) => out.credit_estimate = Some(params),
                    Err(e) => out.notes.push(format!("credit estimate: {e}")),
                }
                out.records.push(record);
                out.mechanism = Some(classify_all(&out.records, &ClassifyParams::default()));
                EngineStep::Finished
            }
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RawBatchesConfig {
    pub env: AttackerEnv,
    pub batches: Vec<ProbeBatch>,
    pub port_base: u16,
    pub settle: SimTime,
    pub classify: ClassifyParams,
}

enum RawState {
    Probe { batch: usize, probe: usize },
    Settle { batch: usize },
}

pub struct RawBatchesEngine {
    cfg: RawBatchesConfig,
    state: RawState,
    sent: Vec<SimTime>,
    ports: Vec<u16>,
    sc_from: usize,
    inbox_from: usize,
    port_seq: u16,
}

impl RawBatchesEngine {
    pub fn new(cfg: RawBatchesConfig) -> Self {
        RawBatchesEngine {
            cfg,
            state: RawState::Probe { batch: 0, probe: 0 },
            sent: Vec::new(),
            ports: Vec::new(),
            sc_from: 0,
            inbox_from: 0,
            port_seq: 0,
        }
    }

    fn open_batch(&mut self, sim: &Simulation) {
        self.sent.clear();
        self.ports.clear();
        self.sc_from = sim.side_channel_log.len();
        self.inbox_from = sim.attacker_inbox.len();
    }

    fn finalize_batch(&mut self, sim: &Simulation, index: usize, out: &mut CampaignOutput) {
        let now = sim.now();
        let batch = self.cfg.batches[index].clone();
        let to = visible_len(sim, self.cfg.env.poll_interval, now);
        let delta = delta_between(sim, self.sc_from, to);
        let replies_by_port = replies_since(sim, self.inbox_from);
        let issued = self.sent.len();
        let mut record = ObservationRecord::new(batch);
        record.detected = detection_in_added(&delta.added, record.batch.src_ip).is_some();
        record.replies = (0..issued)
            .map(|i| {
                let reply_time = replies_by_port.get(&self.ports[i]).copied();
                ReplyEvent {
                    probe_index: i,
                    replied: reply_time.is_some(),
                    reply_time,
                }
            })
            .collect();
        record.probe_sent = self.sent.clone();
        record.probe_src_ports = self.ports.clone();
        record.delta = delta;
        record.issued = issued;
        let responses = record.replies.iter().filter(|r| r.replied).count();
        out.batch_stats.push(BatchStat {
            index,
            issued,
            responses,
            success_ratio: record.success_ratio(),
            failed_ratio: record.failed_ratio(),
            detected: record.detected,
        });
        out.records.push(record);
    }
}

impl Engine for RawBatchesEngine {
    fn on_wake(&mut self, sim: &mut Simulation, out: &mut CampaignOutput) -> EngineStep {
        let now = sim.now();
        match self.state {
            RawState::Probe { batch, probe } => {
                if probe == 0 {
                    self.open_batch(sim);
                }
                let spec = &self.cfg.batches[batch];
                if probe >= spec.targets.len() {
                    self.state = RawState::Settle { batch };
                    return EngineStep::Continue(now + self.cfg.settle);
                }
                let target = spec.targets[probe];
                let src_port = self.cfg.port_base + self.port_seq;
                self.port_seq += 1;
                let flow = sim.next_flow_id();
                let packet = syn_probe(
                    spec.src_ip,
                    target.dst,
                    src_port,
                    target.dst_port,
                    flow,
                    now,
                );
                self.sent.push(now);
                self.ports.push(src_port);
                let spacing = spec.spacing();
                send_probe(sim, &self.cfg.env, packet, now);
                self.state = RawState::Probe {
                    batch,
                    probe: probe + 1,
                };
                EngineStep::Continue(now + spacing)
            }
            RawState::Settle { batch } => {
                self.finalize_batch(sim, batch, out);
                if batch + 1 < self.cfg.batches.len() {
                    self.state = RawState::Probe {
                        batch: batch + 1,
                        probe: 0,
                    };
                    EngineStep::Continue(now + SimTime::from_secs_f64(1.0))
                } else {
                    out.mechanism = Some(classify_all(&out.records, &self.cfg.classify));
                    EngineStep::Finished
                }
            }
        }
    }
}


#[derive(Debug, Clone)]
pub struct BoundaryScanConfig {
    pub env: AttackerEnv,
    pub batches: usize,
    pub probes_per_batch: usize,
    pub rate_per_sec: f64,
    /// Spoofed sources are drawn from this /16.
    pub spoof_base: Ipv4Addr,
    /// Dark destinations are drawn from this subnet.
    pub dark_base: Ipv4Addr,
    pub dst_port: u16,
    pub port_base: u16,
    pub settle: SimTime,
    pub inter_batch_gap: SimTime,
}

struct BoundaryBatch {
    src: Ipv4Addr,
    /// Planned targets in probe order (even interleave of the ratio).
    targets: Vec<ProbeTarget>,
    sent: Vec<SimTime>,
    src_ports: Vec<u16>,
    sc_from: usize,
    detected: bool,
}

enum BoundaryState {
    Batch { batch: usize, probe: usize },
    Settle { batch: usize },
    Done,
}

pub struct BoundaryScanEngine {
    cfg: BoundaryScanConfig,
    responsive: Vec<Ipv4Addr>,
    state: BoundaryState,
    current: Option<BoundaryBatch>,
    started: bool,
}

impl BoundaryScanEngine {
    pub fn new(cfg: BoundaryScanConfig) -> Self {
        BoundaryScanEngine {
            cfg,
            responsive: Vec::new(),
            state: BoundaryState::Batch { batch: 0, probe: 0 },
            current: None,
            started: false,
        }
    }

    fn spacing(&self) -> SimTime {
        SimTime::from_micros((1e6 / self.cfg.rate_per_sec).round() as u64)
    }

    fn spoof_src(&self, batch: usize) -> Ipv4Addr {
        let base = u32::from(self.cfg.spoof_base);
        Ipv4Addr::from(base + 256 * (batch as u32 / 250) + (batch as u32 % 250) + 1)
    }

    /// Even interleaving of responsive and dark targets for one batch. The
    /// success ratio of batch `b` is `b / (batches - 1)`.
    fn plan_batch(&self, batch: usize) -> Vec<ProbeTarget> {
        let n = self.cfg.probes_per_batch;
        let ratio = if self.cfg.batches <= 1 {
            1.0
        } else {
            batch as f64 / (self.cfg.batches - 1) as f64
        };
        let responsive_count = (ratio * n as f64).round() as usize;
        let dark_base = u32::from(self.cfg.dark_base);
        let mut targets = Vec::with_capacity(n);
        let mut resp_used = 0usize;
        let mut dark_used = 0u32;
        for j in 0..n {
            let quota_now = ((j + 1) * responsive_count) / n;
            let quota_before = (j * responsive_count) / n;
            if quota_now > quota_before {
                targets.push(ProbeTarget {
                    dst: self.responsive[resp_used],
                    dst_port: self.cfg.dst_port,
                    expect_reply: true,
                });
                resp_used += 1;
            } else {
                dark_used += 1;
                targets.push(ProbeTarget {
                    dst: Ipv4Addr::from(dark_base + dark_used),
                    dst_port: self.cfg.dst_port,
                    expect_reply: false,
                });
            }
        }
        targets
    }

    fn open_batch(&mut self, sim: &Simulation, batch: usize) {
        self.current = Some(BoundaryBatch {
            src: self.spoof_src(batch),
            targets: self.plan_batch(batch),
            sent: Vec::new(),
            src_ports: Vec::new(),
            sc_from: sim.side_channel_log.len(),
            detected: false,
        });
    }

    fn check_detection(&mut self, sim: &Simulation) -> bool {
        let now = sim.now();
        let cur = self.current.as_mut().expect("batch open");
        let to = visible_len(sim, self.cfg.env.poll_interval, now);
        let delta = delta_between(sim, cur.sc_from, to);
        if detection_in_added(&delta.added, cur.src).is_some() {
            cur.detected = true;
        }
        cur.detected
    }

    fn finalize_batch(&mut self, sim: &Simulation, batch: usize, out: &mut CampaignOutput) {
        let now = sim.now();
        let mut cur = self.current.take().expect("batch open");
        let to = visible_len(sim, self.cfg.env.poll_interval, now);
        let delta = delta_between(sim, cur.sc_from, to);
        if detection_in_added(&delta.added, cur.src).is_some() {
            cur.detected = true;
        }
        let issued = cur.sent.len();
        let ratio = if self.cfg.batches <= 1 {
            1.0
        } else {
            batch as f64 / (self.cfg.batches - 1) as f64
        };
        let mut record = ObservationRecord::new(ProbeBatch {
            kind: ProbeKind::Scan,
            src_ip: cur.src,
            targets: cur.targets.clone(),
            rate_per_sec: self.cfg.rate_per_sec,
            target_success_ratio: ratio,
            seed: batch as u64,
        });
        record.probe_sent = cur.sent.clone();
        record.probe_src_ports = cur.src_ports.clone();
        record.delta = delta;
        record.detected = cur.detected;
        record.issued = issued;
        let responses = cur
            .targets
            .iter()
            .take(issued)
            .filter(|t| t.expect_reply)
            .count();
        out.batch_stats.push(BatchStat {
            index: batch,
            issued,
            responses,
            success_ratio: record.success_ratio(),
            failed_ratio: record.failed_ratio(),
            detected: cur.detected,
        });
        out.records.push(record);
    }
}

impl Engine for BoundaryScanEngine {
    fn on_wake(&mut self, sim: &mut Simulation, out: &mut CampaignOutput) -> EngineStep {
        let now = sim.now();
        if !self.started {
            self.started = true;
            self.responsive = sim
                .topology
                .hosts
                .iter()
                .filter(|h| h.responsive)
                .map(|h| h.ip)
                .collect();
            self.responsive.sort();
            assert!(
                self.responsive.len() >= self.cfg.probes_per_batch,
                "responsive pool smaller than a batch"
            );
        }
        loop {
            match self.state {
                BoundaryState::Batch { batch, probe } => {
                    if self.current.is_none() {
                        self.open_batch(sim, batch);
                    }
                    if self.check_detection(sim) || probe >= self.cfg.probes_per_batch {
                        // aborted or exhausted: wait out pending outcomes
                        self.state = BoundaryState::Settle { batch };
                        return EngineStep::Continue(now + self.cfg.settle);
                    }
                    let cur = self.current.as_mut().expect("batch open");
                    let target = cur.targets[probe];
                    let src_port = self.cfg.port_base + probe as u16;
                    let flow = sim.next_flow_id();
                    let packet = syn_probe(
                        cur.src,
                        target.dst,
                        src_port,
                        target.dst_port,
                        flow,
                        now,
                    );
                    cur.sent.push(now);
                    cur.src_ports.push(src_port);
                    send_probe(sim, &self.cfg.env, packet, now);
                    self.state = BoundaryState::Batch {
                        batch,
                        probe: probe + 1,
                    };
                    return EngineStep::Continue(now + self.spacing());
                }
                BoundaryState::Settle { batch } => {
                    self.finalize_batch(sim, batch, out);
                    if batch + 1 < self.cfg.batches {
                        self.state = BoundaryState::Batch {
                            batch: batch + 1,
                            probe: 0,
                        };
                        return EngineStep::Continue(now + self.cfg.inter_batch_gap);
                    }
                    self.state = BoundaryState::Done;
                }
                BoundaryState::Done => {
                    match estimate_detection_boundary(&out.records) {
                        Ok(est) => out.boundary = Some(est),
                        Err(e) => out.notes.push(format!("boundary estimate: {e}")),
                    }
                    return EngineStep::Finished;
                }
            }
        }
    }
}
