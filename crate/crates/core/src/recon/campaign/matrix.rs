//! Access-matrix reconstruction under a stealth budget.

use std::net::Ipv4Addr;

use super::{
    delta_between, header_of, send_probe, syn_probe, visible_len, AttackerEnv, CampaignOutput,
    Engine, EngineStep,
};
use crate::control::AccessMatrix;
use crate::net::event::SimTime;
use crate::net::sim::{RuleChange, Simulation};
use crate::net::types::{IpMatch, PacketHeader};
use crate::recon::probe::detection_in_added;


#[derive(Debug, Clone)]
pub struct AccessMatrixConfig {
    pub env: AttackerEnv,
    pub subnets: Vec<IpMatch>,
    /// Detection boundary learned earlier (failed-connection ratio).
    pub boundary: f64,
    /// Stealth margin kept below the boundary.
    pub margin: f64,
    pub rate_per_sec: f64,
    pub dst_port: u16,
    pub port_base: u16,
    /// Host octet used for the spoofed source in each subnet.
    pub spoof_octet: u8,
    /// Host octet probed in each destination subnet (a dark address).
    pub dark_octet: u8,
    pub settle: SimTime,
}

struct PendingCell {
    row: usize,
    col: usize,
    header: PacketHeader,
    sent: SimTime,
}

pub struct AccessMatrixEngine {
    cfg: AccessMatrixConfig,
    started: bool,
    row: usize,
    col: usize,
    /// Per-row stealth counters.
    issued: usize,
    failed: usize,
    resp_used: usize,
    responsive_in_row: Vec<Ipv4Addr>,
    pending: Vec<PendingCell>,
    grid: Vec<Vec<bool>>,
    probe_seq: u16,
    finishing: bool,
}

impl AccessMatrixEngine {
    pub fn new(cfg: AccessMatrixConfig) -> Self {
        let n = cfg.subnets.len();
        AccessMatrixEngine {
            cfg,
            started: false,
            row: 0,
            col: 0,
            issued: 0,
            failed: 0,
            resp_used: 0,
            responsive_in_row: Vec::new(),
            pending: Vec::new(),
            grid: vec![vec![false; n]; n],
            probe_seq: 0,
            finishing: false,
        }
    }

    fn spacing(&self) -> SimTime {
        SimTime::from_micros((1e6 / self.cfg.rate_per_sec).round() as u64)
    }

    fn spoof_src(&self, row: usize) -> Ipv4Addr {
        let subnet = self.cfg.subnets[row];
        let base = u32::from(subnet.addr) & (u32::MAX << (32 - subnet.prefix));
        Ipv4Addr::from(base + self.cfg.spoof_octet as u32)
    }

    fn dark_dst(&self, col: usize) -> Ipv4Addr {
        let subnet = self.cfg.subnets[col];
        let base = u32::from(subnet.addr) & (u32::MAX << (32 - subnet.prefix));
        Ipv4Addr::from(base + self.cfg.dark_octet as u32)
    }

    fn load_row_pool(&mut self, sim: &Simulation) {
        let subnet = self.cfg.subnets[self.row];
        self.responsive_in_row = sim
            .topology
            .hosts
            .iter()
            .filter(|h| h.responsive && subnet.matches(h.ip))
            .map(|h| h.ip)
            .collect();
        self.responsive_in_row.sort();
        self.resp_used = 0;
        self.issued = 0;
        self.failed = 0;
    }

    /// Resolves cells whose observation window has passed: the cell is
    /// allowed iff a forward rule matching the probe appeared.
    fn resolve_pending(&mut self, sim: &Simulation, now: SimTime) {
        let window = self.spacing();
        let to = visible_len(sim, self.cfg.env.poll_interval, now);
        let events = &sim.side_channel_log[..to];
        self.pending.retain(|cell| {
            if now < cell.sent + window {
                return true;
            }
            let allowed = events.iter().any(|e| {
                e.change == RuleChange::Added
                    && e.time >= cell.sent
                    && !e.rule.is_drop()
                    && e.rule.matcher.matches(&cell.header, 0)
            });
            self.grid[cell.row][cell.col] = allowed;
            false
        });
    }

    fn detection_visible(&self, sim: &Simulation, now: SimTime) -> bool {
        let to = visible_len(sim, self.cfg.env.poll_interval, now);
        let delta = delta_between(sim, 0, to);
        (0..self.cfg.subnets.len())
            .any(|r| detection_in_added(&delta.added, self.spoof_src(r)).is_some())
    }
}

impl Engine for AccessMatrixEngine {
    fn on_wake(&mut self, sim: &mut Simulation, out: &mut CampaignOutput) -> EngineStep {
        let now = sim.now();
        let target_ratio = self.cfg.boundary - self.cfg.margin;
        if !self.started {
            self.started = true;
            if target_ratio <= 0.0 {
                // stealth impossible: no failed-connection budget at all
                out.stealth_violated = true;
                out.notes
                    .push("access matrix: DetectionTriggered (no stealth budget)".into());
                return EngineStep::Finished;
            }
            self.load_row_pool(sim);
        }

        self.resolve_pending(sim, now);
        if self.detection_visible(sim, now) {
            out.stealth_violated = true;
            out.notes
                .push("access matrix: DetectionTriggered (campaign aborted)".into());
            return EngineStep::Finished;
        }

        if self.finishing {
            if !self.pending.is_empty() {
                return EngineStep::Continue(now + self.cfg.settle);
            }
            let subnets = self.cfg.subnets.clone();
            out.matrix = Some(AccessMatrix::square(subnets, self.grid.clone()));
            return EngineStep::Finished;
        }

        if self.row >= self.cfg.subnets.len() {
            self.finishing = true;
            return EngineStep::Continue(now + self.cfg.settle);
        }

        // keep the per-source failed ratio under the stealth budget by
        // opening successful connections before each dark probe
        let src = self.spoof_src(self.row);
        let needs_success =
            (self.failed as f64 + 1.0) / (self.issued as f64 + 1.0) > target_ratio;
        let src_port = self.cfg.port_base + self.probe_seq;
        self.probe_seq += 1;
        let flow = sim.next_flow_id();

        if needs_success {
            assert!(
                self.resp_used < self.responsive_in_row.len(),
                "responsive pool exhausted for stealth interleaving"
            );
            let dst = self.responsive_in_row[self.resp_used];
            self.resp_used += 1;
            let packet = syn_probe(src, dst, src_port, self.cfg.dst_port, flow, now);
            send_probe(sim, &self.cfg.env, packet, now);
            self.issued += 1;
        } else {
            let dst = self.dark_dst(self.col);
            let packet = syn_probe(src, dst, src_port, self.cfg.dst_port, flow, now);
            send_probe(sim, &self.cfg.env, packet, now);
            self.issued += 1;
            self.failed += 1;
            self.pending.push(PendingCell {
                row: self.row,
                col: self.col,
                header: header_of(src, dst, src_port, self.cfg.dst_port),
                sent: now,
            });
            self.col += 1;
            if self.col >= self.cfg.subnets.len() {
                self.col = 0;
                self.row += 1;
                if self.row < self.cfg.subnets.len() {
                    self.load_row_pool(sim);
                }
            }
        }
        EngineStep::Continue(now + self.spacing())
    }
}
