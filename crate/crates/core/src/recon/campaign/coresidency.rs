//! Tenant co-residency probing.

use std::net::Ipv4Addr;

use super::{
    header_of, send_probe, syn_probe, visible_len, AttackerEnv, CampaignOutput, Engine, EngineStep,
};
use crate::net::event::SimTime;
use crate::net::sim::{RuleChange, Simulation};


#[derive(Debug, Clone)]
pub struct CoResidencyConfig {
    pub env: AttackerEnv,
    pub target_ip: Ipv4Addr,
    pub target_tenant: u16,
    pub dst_port: u16,
    pub src_port: u16,
}

pub struct CoResidencyEngine {
    cfg: CoResidencyConfig,
    sc_from: usize,
    sent: bool,
}

impl CoResidencyEngine {
    pub fn new(cfg: CoResidencyConfig) -> Self {
        CoResidencyEngine {
            cfg,
            sc_from: 0,
            sent: false,
        }
    }
}

impl Engine for CoResidencyEngine {
    fn on_wake(&mut self, sim: &mut Simulation, out: &mut CampaignOutput) -> EngineStep {
        let now = sim.now();
        if !self.sent {
            self.sent = true;
            self.sc_from = sim.side_channel_log.len();
            let flow = sim.next_flow_id();
            let mut packet = syn_probe(
                self.cfg.env.ip,
                self.cfg.target_ip,
                self.cfg.src_port,
                self.cfg.dst_port,
                flow,
                now,
            );
            packet.header.tenant_tag = Some(self.cfg.target_tenant);
            send_probe(sim, &self.cfg.env, packet, now);
            return EngineStep::Continue(now + SimTime::from_secs_f64(0.5));
        }
        let to = visible_len(sim, self.cfg.env.poll_interval, now);
        let mut header = header_of(
            self.cfg.env.ip,
            self.cfg.target_ip,
            self.cfg.src_port,
            self.cfg.dst_port,
        );
        header.tenant_tag = Some(self.cfg.target_tenant);
        let co_resident = sim.side_channel_log[self.sc_from..to].iter().any(|e| {
            e.change == RuleChange::Added
                && e.rule.matcher.matches(&header, 0)
                && e.rule.output_port() == Some(self.cfg.env.port)
        });
        out.co_resident = Some(co_resident);
        EngineStep::Finished
    }
}

