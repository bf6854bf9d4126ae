//! Baseline forwarding: exact-match rules along the shortest path.

use crate::error::PolicyError;
use crate::net::table::RuleSpec;
use crate::net::topology::Topology;
use crate::net::types::{Action, FlowKey, PacketHeader};
use crate::net::{PortId, SwitchId};

/// Priority of baseline forwarding rules.
pub const BASELINE_PRIORITY: u32 = 10;
/// Priority of aggregation wildcard rules; below the baseline.
pub const WILDCARD_PRIORITY: u32 = 5;
/// Priority of escalated exact-match rules; above every wildcard.
pub const EXACT_OVERRIDE_PRIORITY: u32 = 20;
/// Priority of defense rules (drops, redirects, rate limits).
pub const DEFENSE_PRIORITY: u32 = 100;

/// Forwarding rule for one flow on one switch: exact src/dst pair match,
/// output toward the destination.
pub fn baseline_rule(
    topo: &Topology,
    switch: SwitchId,
    header: &PacketHeader,
) -> Result<RuleSpec, PolicyError> {
    let port = topo.route_port(switch, header.dst)?;
    Ok(RuleSpec::new(
        FlowKey::exact_pair(header),
        BASELINE_PRIORITY,
        vec![Action::Forward(port)],
    ))
}

/// Egress port for a one-off packet-out, without installing anything.
pub fn packet_out_port(
    topo: &Topology,
    switch: SwitchId,
    header: &PacketHeader,
) -> Result<PortId, PolicyError> {
    topo.route_port(switch, header.dst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::event::SimTime;
    use crate::net::topology::Host;
    use crate::net::types::{IpProto, TcpFlags};

    fn topo() -> Topology {
        let mk = |name: &str, ip: [u8; 4], port: u32| Host {
            name: name.into(),
            ip: ip.into(),
            switch: 1,
            port,
            latency: SimTime::from_micros(1000),
            tenant: None,
            responsive: true,
        };
        Topology::new(
            [1],
            vec![mk("a", [10, 0, 0, 1], 1), mk("b", [10, 0, 0, 2], 2)],
            Vec::new(),
            Vec::new(),
        )
    }

    fn header(src: [u8; 4], dst: [u8; 4]) -> PacketHeader {
        PacketHeader {
            src: src.into(),
            dst: dst.into(),
            proto: IpProto::Tcp,
            src_port: 4000,
            dst_port: 80,
            tcp_flags: TcpFlags::SYN,
            tenant_tag: None,
        }
    }

    #[test]
    fn adjacent_host_gets_forward_rule() {
        let t = topo();
        let rule = baseline_rule(&t, 1, &header([10, 0, 0, 1], [10, 0, 0, 2])).unwrap();
        assert_eq!(rule.actions, vec![Action::Forward(2)]);
        assert!(rule.matcher.src.is_exact() && rule.matcher.dst.is_exact());
    }

    #[test]
    fn unknown_destination_is_no_route() {
        let t = topo();
        assert!(matches!(
            baseline_rule(&t, 1, &header([10, 0, 0, 1], [10, 0, 5, 5])),
            Err(PolicyError::NoRoute(_))
        ));
    }

    #[test]
    fn each_direction_gets_its_own_rule() {
        let t = topo();
        let ab = baseline_rule(&t, 1, &header([10, 0, 0, 1], [10, 0, 0, 2])).unwrap();
        let ba = baseline_rule(&t, 1, &header([10, 0, 0, 2], [10, 0, 0, 1])).unwrap();
        assert_ne!(ab.matcher, ba.matcher);
        assert_eq!(ab.actions, vec![Action::Forward(2)]);
        assert_eq!(ba.actions, vec![Action::Forward(1)]);
    }
}
