//! Probe batches and the observation records they produce.

use std::net::Ipv4Addr;

use serde::Serialize;

use crate::control::router::DEFENSE_PRIORITY;
use crate::net::event::SimTime;
use crate::net::table::FlowRule;
use crate::net::SwitchId;

/// What a batch of probe traffic is trying to learn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Scan,
    Dos,
    AccessProbe,
    FlowRamp,
    SynProbe,
    RedirectProbe,
    CoResProbe,
}

/// One probe destination. `expect_reply` marks destinations drawn from the
/// known-responsive pool; the mix of responsive and dark targets engineers
/// the batch's success ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProbeTarget {
    pub dst: Ipv4Addr,
    pub dst_port: u16,
    pub expect_reply: bool,
}

/// Parameterized attack-traffic description.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeBatch {
    pub kind: ProbeKind,
    /// Source address, possibly spoofed.
    pub src_ip: Ipv4Addr,
    pub targets: Vec<ProbeTarget>,
    pub rate_per_sec: f64,
    /// Engineered fraction of probes aimed at responsive hosts.
    pub target_success_ratio: f64,
    pub seed: u64,
}

impl ProbeBatch {
    pub fn validate(&self) -> Result<(), String> {
        if self.rate_per_sec <= 0.0 {
            return Err("probe rate must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.target_success_ratio) {
            return Err("target_success_ratio must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn spacing(&self) -> SimTime {
        SimTime::from_micros((1e6 / self.rate_per_sec).round() as u64)
    }
}

/// Reply bookkeeping for one probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReplyEvent {
    pub probe_index: usize,
    pub replied: bool,
    pub reply_time: Option<SimTime>,
}

/// Flow-table changes observed while a batch ran.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RuleDelta {
    pub added: Vec<(SimTime, SwitchId, FlowRule)>,
    pub removed: Vec<(SimTime, SwitchId, FlowRule)>,
}

impl RuleDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

/// Everything the attacker observed for one batch: what was sent, what came
/// back, and how the flow table changed.
#[derive(Debug, Clone, Serialize)]
pub struct ObservationRecord {
    pub batch: ProbeBatch,
    /// Send time per probe, in probe order. Length equals `issued`.
    pub probe_sent: Vec<SimTime>,
    /// Source port per probe; every probe is its own flow.
    pub probe_src_ports: Vec<u16>,
    pub replies: Vec<ReplyEvent>,
    pub delta: RuleDelta,
    /// A drop or wide defense rule targeting the batch source appeared.
    pub detected: bool,
    /// Probes actually issued; shorter than `targets` when a batch aborted.
    pub issued: usize,
    /// Destination to baseline output port, from benign pre-probing.
    pub baseline_ports: Vec<(Ipv4Addr, u32)>,
    /// Destination to output port after the high-profile phase.
    pub post_ports: Vec<(Ipv4Addr, u32)>,
}

impl ObservationRecord {
    pub fn new(batch: ProbeBatch) -> Self {
        ObservationRecord {
            batch,
            probe_sent: Vec::new(),
            probe_src_ports: Vec::new(),
            replies: Vec::new(),
            delta: RuleDelta::default(),
            detected: false,
            issued: 0,
            baseline_ports: Vec::new(),
            post_ports: Vec::new(),
        }
    }

    /// Header of the i-th probe as it entered the network.
    pub fn probe_header(&self, index: usize) -> crate::net::types::PacketHeader {
        let target = &self.batch.targets[index];
        let src_port = self
            .probe_src_ports
            .get(index)
            .copied()
            .unwrap_or(10_000 + (index % 50_000) as u16);
        crate::net::types::PacketHeader {
            src: self.batch.src_ip,
            dst: target.dst,
            proto: crate::net::types::IpProto::Tcp,
            src_port,
            dst_port: target.dst_port,
            tcp_flags: crate::net::types::TcpFlags::SYN,
            tenant_tag: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.issued == 0 && self.delta.is_empty()
    }

    /// Per-probe success bitmap in probe order.
    pub fn bitmap(&self) -> Vec<bool> {
        let mut map = vec![false; self.issued];
        for r in &self.replies {
            if r.probe_index < map.len() {
                map[r.probe_index] = r.replied;
            }
        }
        map
    }

    /// Fraction of issued probes aimed at dark destinations.
    pub fn failed_ratio(&self) -> f64 {
        if self.issued == 0 {
            return 0.0;
        }
        let dark = self
            .batch
            .targets
            .iter()
            .take(self.issued)
            .filter(|t| !t.expect_reply)
            .count();
        dark as f64 / self.issued as f64
    }

    pub fn success_ratio(&self) -> f64 {
        if self.issued == 0 {
            return 0.0;
        }
        1.0 - self.failed_ratio()
    }
}

/// True when the delta contains a rule that targets the source broadly: a
/// drop rule covering it, or a wide high-priority rule such as a redirect.
pub fn detection_in_added(added: &[(SimTime, SwitchId, FlowRule)], src: Ipv4Addr) -> Option<SimTime> {
    added
        .iter()
        .find(|(_, _, r)| {
            r.matcher.src.matches(src)
                && (r.is_drop() || (r.priority >= DEFENSE_PRIORITY && r.matcher.dst.prefix == 0))
        })
        .map(|(t, _, _)| *t)
}

/// Rules in the delta whose match covers the given probe flow.
pub fn rules_matching_flow<'a>(
    added: &'a [(SimTime, SwitchId, FlowRule)],
    header: &crate::net::types::PacketHeader,
) -> Vec<&'a (SimTime, SwitchId, FlowRule)> {
    added
        .iter()
        .filter(|(_, _, r)| r.matcher.matches(header, 0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::types::{FlowKey, IpMatch};

    fn drop_rule(src: Ipv4Addr) -> FlowRule {
        FlowRule {
            rule_id: 1,
            matcher: FlowKey::src_only(src),
            priority: DEFENSE_PRIORITY,
            actions: Vec::new(),
            idle_timeout: None,
            hard_timeout: None,
            installed_at: SimTime::ZERO,
            packet_count: 0,
            byte_count: 0,
            last_matched: None,
        }
    }

    #[test]
    fn drop_rule_on_source_counts_as_detection() {
        let src = Ipv4Addr::new(10, 0, 0, 9);
        let added = vec![(SimTime::ZERO, 1, drop_rule(src))];
        assert!(detection_in_added(&added, src).is_some());
        assert!(detection_in_added(&added, Ipv4Addr::new(10, 0, 0, 10)).is_none());
    }

    #[test]
    fn exact_forward_rule_is_not_detection() {
        let src = Ipv4Addr::new(10, 0, 0, 9);
        let mut rule = drop_rule(src);
        rule.matcher.dst = IpMatch::exact([10, 0, 1, 1].into());
        rule.priority = 10;
        rule.actions = vec![crate::net::types::Action::Forward(2)];
        let added = vec![(SimTime::ZERO, 1, rule)];
        assert!(detection_in_added(&added, src).is_none());
    }

    #[test]
    fn batch_validation_rejects_bad_parameters() {
        let mut batch = ProbeBatch {
            kind: ProbeKind::Scan,
            src_ip: [10, 0, 0, 9].into(),
            targets: Vec::new(),
            rate_per_sec: 0.0,
            target_success_ratio: 0.5,
            seed: 0,
        };
        assert!(batch.validate().is_err(), "rate must be positive");
        batch.rate_per_sec = 10.0;
        batch.target_success_ratio = 1.5;
        assert!(batch.validate().is_err(), "ratio must stay in [0, 1]");
        batch.target_success_ratio = 1.0;
        assert!(batch.validate().is_ok());
        assert_eq!(batch.spacing(), SimTime::from_micros(100_000));
    }

    #[test]
    fn failed_ratio_counts_dark_targets() {
        let mut rec = ObservationRecord::new(ProbeBatch {
            kind: ProbeKind::Scan,
            src_ip: [10, 0, 0, 9].into(),
            targets: vec![
                ProbeTarget {
                    dst: [10, 0, 1, 1].into(),
                    dst_port: 80,
                    expect_reply: true,
                },
                ProbeTarget {
                    dst: [10, 0, 2, 1].into(),
                    dst_port: 80,
                    expect_reply: false,
                },
            ],
            rate_per_sec: 1.0,
            target_success_ratio: 0.5,
            seed: 0,
        });
        rec.issued = 2;
        assert_eq!(rec.failed_ratio(), 0.5);
    }
}
