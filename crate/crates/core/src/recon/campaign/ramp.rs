//! Aggregation threshold recovery by rate ramping.

use std::net::Ipv4Addr;

use super::{
    header_of, send_probe, syn_probe, visible_len, AttackerEnv, CampaignOutput, Engine, EngineStep,
};
use crate::net::event::SimTime;
use crate::net::sim::{RuleChange, Simulation};
use crate::net::types::{Packet, PacketHeader, PacketKind};


#[derive(Debug, Clone)]
pub struct AggregationRampConfig {
    pub env: AttackerEnv,
    pub dst: Ipv4Addr,
    pub dst_port: u16,
    pub src_port: u16,
    /// Ramp grid in tenths of Mbit/s.
    pub start_tenths: u32,
    pub step_tenths: u32,
    pub max_tenths: u32,
    pub step_secs: f64,
    pub packet_bytes: u64,
}

enum RampState {
    FirstProbe,
    CheckWildcard,
    Step { tenths: u32 },
    CheckStep { tenths: u32 },
    Done,
}

pub struct AggregationRampEngine {
    cfg: AggregationRampConfig,
    state: RampState,
    sc_from: usize,
    /// Bytes sent on the ramp flow so far, for size-threshold recovery.
    bytes_sent: u64,
}

impl AggregationRampEngine {
    pub fn new(cfg: AggregationRampConfig) -> Self {
        AggregationRampEngine {
            cfg,
            state: RampState::FirstProbe,
            sc_from: 0,
            bytes_sent: 0,
        }
    }

    fn flow_header(&self) -> PacketHeader {
        header_of(self.cfg.env.ip, self.cfg.dst, self.cfg.src_port, self.cfg.dst_port)
    }

    /// Exact-match rule covering the ramp flow, if one appeared.
    fn exact_rule_seen(&self, sim: &Simulation, from: usize) -> bool {
        let now = sim.now();
        let to = visible_len(sim, self.cfg.env.poll_interval, now);
        let header = self.flow_header();
        sim.side_channel_log[from..to].iter().any(|e| {
            e.change == RuleChange::Added
                && e.rule.matcher.dst.is_exact()
                && e.rule.matcher.src.is_exact()
                && e.rule.matcher.matches(&header, 0)
        })
    }

    fn wildcard_seen(&self, sim: &Simulation, from: usize) -> bool {
        let now = sim.now();
        let to = visible_len(sim, self.cfg.env.poll_interval, now);
        let header = self.flow_header();
        sim.side_channel_log[from..to].iter().any(|e| {
            e.change == RuleChange::Added
                && !e.rule.matcher.dst.is_exact()
                && e.rule.matcher.matches(&header, 0)
        })
    }

    fn schedule_step_traffic(&mut self, sim: &mut Simulation, tenths: u32, start: SimTime) {
        // 0.1 Mbit/s of 1250-byte packets is 10 packets/second
        let pps = tenths as u64 * 10;
        let count = (pps as f64 * self.cfg.step_secs).round() as u64;
        let spacing_us = 1_000_000 / pps;
        for i in 0..count {
            let flow = sim.next_flow_id();
            let packet = Packet::new(
                PacketKind::TcpData,
                self.cfg.env.ip,
                self.cfg.dst,
                self.cfg.src_port,
                self.cfg.dst_port,
                self.cfg.packet_bytes,
                flow,
                start,
            );
            let at = start + SimTime::from_micros(i * spacing_us);
            send_probe(sim, &self.cfg.env, packet, at);
            self.bytes_sent += self.cfg.packet_bytes;
        }
    }
}

impl Engine for AggregationRampEngine {
    fn on_wake(&mut self, sim: &mut Simulation, out: &mut CampaignOutput) -> EngineStep {
        let now = sim.now();
        match self.state {
            RampState::FirstProbe => {
                self.sc_from = sim.side_channel_log.len();
                let flow = sim.next_flow_id();
                let packet = syn_probe(
                    self.cfg.env.ip,
                    self.cfg.dst,
                    self.cfg.src_port,
                    self.cfg.dst_port,
                    flow,
                    now,
                );
                send_probe(sim, &self.cfg.env, packet, now);
                self.state = RampState::CheckWildcard;
                EngineStep::Continue(now + SimTime::from_secs_f64(0.3))
            }
            RampState::CheckWildcard => {
                if !self.wildcard_seen(sim, self.sc_from) {
                    out.notes
                        .push("aggregation ramp: NoWildcardObserved".into());
                    return EngineStep::Finished;
                }
                self.state = RampState::Step {
                    tenths: self.cfg.start_tenths,
                };
                EngineStep::Continue(now + SimTime::from_secs_f64(0.2))
            }
            RampState::Step { tenths } => {
                self.sc_from = sim.side_channel_log.len();
                self.schedule_step_traffic(sim, tenths, now);
                self.state = RampState::CheckStep { tenths };
                EngineStep::Continue(now + SimTime::from_secs_f64(self.cfg.step_secs + 0.05))
            }
            RampState::CheckStep { tenths } => {
                if self.exact_rule_seen(sim, self.sc_from) {
                    let bytes_per_sec = tenths as f64 * 12_500.0;
                    out.aggregation_threshold_bytes_per_sec = Some(bytes_per_sec);
                    // the attacker also knows the cumulative volume it sent,
                    // which recovers size-based thresholds
                    out.aggregation_cumulative_bytes = Some(self.bytes_sent);
                    self.state = RampState::Done;
                    return EngineStep::Continue(now + SimTime::from_secs_f64(0.1));
                }
                let next = tenths + self.cfg.step_tenths;
                if next > self.cfg.max_tenths {
                    out.notes
                        .push("aggregation ramp: threshold not found within the grid".into());
                    return EngineStep::Finished;
                }
                self.state = RampState::Step { tenths: next };
                EngineStep::Continue(now + SimTime::from_secs_f64(0.05))
            }
            RampState::Done => EngineStep::Finished,
        }
    }
}
