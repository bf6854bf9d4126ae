//! Obfuscation chain planning.
//!
//! For a chain of `k` switches the first `k-1` each carry a single rule with
//! header-rewrite actions followed by a forward, and the k-th switch carries
//! the policy rule matching the fully rewritten header. Composing the
//! rewrites maps the original header to the header matched at the policy
//! hop; the policy rule restores the original fields on the way out.

use std::net::Ipv4Addr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ledger::AddrPair;
use crate::error::ObfuscationError;
use crate::net::table::RuleSpec;
use crate::net::topology::Topology;
use crate::net::types::{Action, FieldWrite, FlowKey, IpMatch, PacketHeader};
use crate::net::SwitchId;

/// Scenario-level obfuscation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObfuscationSettings {
    /// Chain length including the policy hop. 1 disables obfuscation.
    pub k: u32,
    /// Address range rewrites are drawn from.
    #[serde(default = "default_pool")]
    pub rewrite_pool_cidr: IpMatch,
}

fn default_pool() -> IpMatch {
    IpMatch::subnet(Ipv4Addr::new(198, 18, 0, 0), 16)
}

impl ObfuscationSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.k < 1 {
            return Err("obfuscation k must be >= 1".into());
        }
        if self.rewrite_pool_cidr.prefix > 24 {
            return Err("rewrite pool must be at least a /24".into());
        }
        Ok(())
    }
}

/// Sequential allocator over the rewrite pool. Allocations never repeat, so
/// ledger entries stay collision-free.
#[derive(Debug)]
pub struct RewritePool {
    base: u32,
    size: u32,
    next: u32,
}

impl RewritePool {
    pub fn new(cidr: IpMatch) -> Self {
        let size = if cidr.prefix == 0 {
            u32::MAX
        } else {
            1u32 << (32 - cidr.prefix)
        };
        RewritePool {
            base: u32::from(cidr.addr) & (u32::MAX << (32 - cidr.prefix.max(1))),
            size,
            next: 0,
        }
    }

    pub fn alloc_pair(&mut self) -> AddrPair {
        assert!(self.next + 2 <= self.size, "rewrite pool exhausted");
        let a = Ipv4Addr::from(self.base + self.next);
        let b = Ipv4Addr::from(self.base + self.next + 1);
        self.next += 2;
        (a, b)
    }
}

/// A planned chain: rewrite rules for the first `k-1` switches plus the
/// header the policy hop will see.
#[derive(Debug, Clone)]
pub struct ObfuscationPlan {
    pub path: Vec<SwitchId>,
    pub rewrite_rules: Vec<(SwitchId, RuleSpec)>,
    /// Header as it arrives at the policy hop.
    pub policy_header: PacketHeader,
    /// (rewritten pair, original pair, hop index) for the ledger.
    pub ledger_entries: Vec<(AddrPair, AddrPair, usize)>,
}

impl ObfuscationPlan {
    pub fn policy_hop(&self) -> SwitchId {
        *self.path.last().expect("path non-empty")
    }
}

/// Picks a simple path of `k` switches starting at `ingress`. The choice
/// among eligible paths is seeded, never load-dependent.
pub fn plan_path(
    topo: &Topology,
    ingress: SwitchId,
    k: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SwitchId>, ObfuscationError> {
    if k <= 1 {
        return Ok(vec![ingress]);
    }
    let paths = topo.simple_paths(ingress, k as usize);
    if paths.is_empty() {
        return Err(ObfuscationError::PathTooShort {
            ingress,
            wanted: k as usize,
        });
    }
    let idx = rng.gen_range(0..paths.len());
    Ok(paths[idx].clone())
}

/// Builds the rewrite prefix of a plan along `path`. The caller appends the
/// policy rule for `policy_header` at the last switch.
///
/// The first rewrite rule matches only on the flow's ingress port. After the
/// policy hop restores the original header, the packet may transit the
/// ingress switch again on its way to the destination; scoping the rule to
/// the entry port keeps it from being rewritten a second time.
pub fn build_plan(
    topo: &Topology,
    path: &[SwitchId],
    header: &PacketHeader,
    ingress_port: crate::net::PortId,
    priority: u32,
    pool: &mut RewritePool,
) -> ObfuscationPlan {
    let original: AddrPair = (header.src, header.dst);
    let mut current = *header;
    let mut rewrite_rules = Vec::new();
    let mut ledger_entries = Vec::new();

    for hop in 0..path.len().saturating_sub(1) {
        let here = path[hop];
        let next = path[hop + 1];
        let out_port = topo
            .port_toward(here, next)
            .expect("path hops are neighbors");
        let (new_src, new_dst) = pool.alloc_pair();
        let mut matcher = FlowKey::exact_pair(&current);
        if hop == 0 {
            matcher.ingress_port = Some(ingress_port);
        }
        let spec = RuleSpec::new(
            matcher,
            priority,
            vec![
                Action::SetField(FieldWrite::SrcIp(new_src)),
                Action::SetField(FieldWrite::DstIp(new_dst)),
                Action::Forward(out_port),
            ],
        );
        rewrite_rules.push((here, spec));
        current.src = new_src;
        current.dst = new_dst;
        ledger_entries.push(((new_src, new_dst), original, hop + 1));
    }

    ObfuscationPlan {
        path: path.to_vec(),
        rewrite_rules,
        policy_header: current,
        ledger_entries,
    }
}

/// Actions restoring the original addresses, prepended to forwarding policy
/// rules at the policy hop.
pub fn restore_actions(original: &PacketHeader) -> Vec<Action> {
    vec![
        Action::SetField(FieldWrite::SrcIp(original.src)),
        Action::SetField(FieldWrite::DstIp(original.dst)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::event::SimTime;
    use crate::net::topology::{Host, Link};
    use crate::net::types::{IpProto, TcpFlags};
    use rand::SeedableRng;

    fn line_topo() -> Topology {
        let host = |name: &str, ip: [u8; 4], sw: u32, port: u32| Host {
            name: name.into(),
            ip: ip.into(),
            switch: sw,
            port,
            latency: SimTime::from_micros(1000),
            tenant: None,
            responsive: false,
        };
        Topology::new(
            [1, 2, 3],
            vec![host("a", [10, 0, 0, 1], 1, 1), host("b", [10, 0, 1, 1], 3, 1)],
            vec![
                Link {
                    a: (1, 10),
                    b: (2, 11),
                    latency: SimTime::from_micros(500),
                },
                Link {
                    a: (2, 12),
                    b: (3, 13),
                    latency: SimTime::from_micros(500),
                },
            ],
            Vec::new(),
        )
    }

    fn header() -> PacketHeader {
        PacketHeader {
            src: [10, 0, 0, 1].into(),
            dst: [10, 0, 1, 1].into(),
            proto: IpProto::Tcp,
            src_port: 4000,
            dst_port: 80,
            tcp_flags: TcpFlags::SYN,
            tenant_tag: None,
        }
    }

    #[test]
    fn k1_plan_is_just_the_ingress() {
        let topo = line_topo();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(plan_path(&topo, 1, 1, &mut rng).unwrap(), vec![1]);
    }

    #[test]
    fn k3_line_yields_two_rewrites() {
        let topo = line_topo();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let path = plan_path(&topo, 1, 3, &mut rng).unwrap();
        assert_eq!(path, vec![1, 2, 3]);
        let mut pool = RewritePool::new(IpMatch::subnet([198, 18, 0, 0].into(), 16));
        let plan = build_plan(&topo, &path, &header(), 1, 10, &mut pool);
        assert_eq!(plan.rewrite_rules.len(), 2);
        // every rewrite rule is set-fields followed by exactly one forward
        for (_, spec) in &plan.rewrite_rules {
            let n = spec.actions.len();
            assert!(matches!(spec.actions[n - 1], Action::Forward(_)));
            assert!(spec.actions[..n - 1]
                .iter()
                .all(|a| matches!(a, Action::SetField(_))));
        }
        // composed rewrites produce the header matched at the policy hop
        assert_ne!(plan.policy_header.src, header().src);
        assert!(IpMatch::subnet([198, 18, 0, 0].into(), 16).matches(plan.policy_header.src));
    }

    #[test]
    fn k_beyond_diameter_is_path_too_short() {
        let topo = line_topo();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            plan_path(&topo, 1, 4, &mut rng),
            Err(ObfuscationError::PathTooShort { .. })
        ));
    }

    #[test]
    fn pool_allocations_never_collide() {
        let mut pool = RewritePool::new(IpMatch::subnet([198, 18, 0, 0].into(), 24));
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..100 {
            let (a, b) = pool.alloc_pair();
            assert!(seen.insert(a));
            assert!(seen.insert(b));
        }
    }
}
