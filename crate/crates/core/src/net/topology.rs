//! Switches, hosts, links and route computation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::event::SimTime;
use super::types::IpMatch;
use super::{HostId, PortId, SwitchId};
use crate::error::PolicyError;

/// A host attached to a switch port. Multiple hosts may share a port, which
/// models tenant VMs co-resident on one physical machine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Host {
    pub name: String,
    pub ip: Ipv4Addr,
    pub switch: SwitchId,
    pub port: PortId,
    pub latency: SimTime,
    pub tenant: Option<u16>,
    /// Responsive hosts answer every TCP SYN with a SYN-ACK.
    pub responsive: bool,
}

/// Bidirectional switch-to-switch link with a constant latency.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Link {
    pub a: (SwitchId, PortId),
    pub b: (SwitchId, PortId),
    pub latency: SimTime,
}

/// A routable address range with no attached hosts. Packets forwarded out a
/// stub port leave the simulation; they model dark address space behind an
/// exit port.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubSubnet {
    pub cidr: IpMatch,
    pub switch: SwitchId,
    pub port: PortId,
    pub latency: SimTime,
}

/// What sits behind a given switch port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PortPeer {
    /// Another switch, reached over a link.
    Switch {
        switch: SwitchId,
        port: PortId,
        latency: SimTime,
    },
    /// One or more hosts (co-resident hosts share the port).
    Hosts(Vec<HostId>),
    /// A stub subnet exit; packets sent here vanish.
    Stub,
}

/// The static network graph plus address-to-attachment indexes.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    pub hosts: Vec<Host>,
    pub links: Vec<Link>,
    pub stubs: Vec<StubSubnet>,
    switch_ids: BTreeSet<SwitchId>,
    host_by_ip: BTreeMap<Ipv4Addr, HostId>,
    ports: BTreeMap<(SwitchId, PortId), PortPeer>,
}

impl Topology {
    pub fn new(
        switch_ids: impl IntoIterator<Item = SwitchId>,
        hosts: Vec<Host>,
        links: Vec<Link>,
        stubs: Vec<StubSubnet>,
    ) -> Self {
        let mut topo = Topology {
            hosts,
            links,
            stubs,
            switch_ids: switch_ids.into_iter().collect(),
            host_by_ip: BTreeMap::new(),
            ports: BTreeMap::new(),
        };
        topo.rebuild_indexes();
        topo
    }

    fn rebuild_indexes(&mut self) {
        self.host_by_ip.clear();
        self.ports.clear();
        for link in &self.links {
            self.ports.insert(
                link.a,
                PortPeer::Switch {
                    switch: link.b.0,
                    port: link.b.1,
                    latency: link.latency,
                },
            );
            self.ports.insert(
                link.b,
                PortPeer::Switch {
                    switch: link.a.0,
                    port: link.a.1,
                    latency: link.latency,
                },
            );
        }
        for (idx, host) in self.hosts.iter().enumerate() {
            self.host_by_ip.insert(host.ip, idx);
            match self
                .ports
                .entry((host.switch, host.port))
                .or_insert_with(|| PortPeer::Hosts(Vec::new()))
            {
                PortPeer::Hosts(v) => v.push(idx),
                other => panic!("port {:?} already used by {:?}", (host.switch, host.port), other),
            }
        }
        for stub in &self.stubs {
            self.ports.insert((stub.switch, stub.port), PortPeer::Stub);
        }
    }

    pub fn switch_ids(&self) -> impl Iterator<Item = SwitchId> + '_ {
        self.switch_ids.iter().copied()
    }

    pub fn has_switch(&self, id: SwitchId) -> bool {
        self.switch_ids.contains(&id)
    }

    pub fn peer(&self, switch: SwitchId, port: PortId) -> Option<&PortPeer> {
        self.ports.get(&(switch, port))
    }

    pub fn host(&self, id: HostId) -> &Host {
        &self.hosts[id]
    }

    pub fn host_by_ip(&self, ip: Ipv4Addr) -> Option<HostId> {
        self.host_by_ip.get(&ip).copied()
    }

    pub fn host_by_name(&self, name: &str) -> Option<HostId> {
        self.hosts.iter().position(|h| h.name == name)
    }

    /// Stub subnet covering `ip`, most specific prefix first.
    pub fn stub_for(&self, ip: Ipv4Addr) -> Option<&StubSubnet> {
        self.stubs
            .iter()
            .filter(|s| s.cidr.matches(ip))
            .max_by_key(|s| s.cidr.prefix)
    }

    /// The attachment switch an address is reached through, and the local
    /// egress port on that switch.
    pub fn attachment(&self, ip: Ipv4Addr) -> Option<(SwitchId, PortId)> {
        if let Some(h) = self.host_by_ip(ip) {
            let host = &self.hosts[h];
            return Some((host.switch, host.port));
        }
        self.stub_for(ip).map(|s| (s.switch, s.port))
    }

    /// Next-hop egress port from `from` toward `ip`, following the shortest
    /// path by hop count with ties broken by lowest next-switch id.
    pub fn route_port(&self, from: SwitchId, ip: Ipv4Addr) -> Result<PortId, PolicyError> {
        let (target_switch, local_port) = self.attachment(ip).ok_or(PolicyError::NoRoute(ip))?;
        if from == target_switch {
            return Ok(local_port);
        }
        let hop = self
            .next_hop(from, target_switch)
            .ok_or(PolicyError::NoRoute(ip))?;
        Ok(hop)
    }

    /// Egress port on `from` toward `to` (switch-level BFS).
    fn next_hop(&self, from: SwitchId, to: SwitchId) -> Option<PortId> {
        // neighbors sorted by switch id keeps the BFS deterministic
        let mut adj: BTreeMap<SwitchId, Vec<(SwitchId, PortId)>> = BTreeMap::new();
        for link in &self.links {
            adj.entry(link.a.0).or_default().push((link.b.0, link.a.1));
            adj.entry(link.b.0).or_default().push((link.a.0, link.b.1));
        }
        for neighbors in adj.values_mut() {
            neighbors.sort();
        }
        let mut prev: BTreeMap<SwitchId, (SwitchId, PortId)> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(sw) = queue.pop_front() {
            if sw == to {
                // walk back to the first hop
                let mut cur = to;
                let mut port = None;
                while cur != from {
                    let (p, via) = prev[&cur];
                    port = Some(via);
                    cur = p;
                }
                return port;
            }
            for &(next, via_port) in adj.get(&sw).into_iter().flatten() {
                if seen.insert(next) {
                    prev.insert(next, (sw, via_port));
                    queue.push_back(next);
                }
            }
        }
        None
    }

    /// Ordered list of switches on the shortest path from `from` to the
    /// attachment switch of `ip`, including both endpoints.
    pub fn switch_path(&self, from: SwitchId, ip: Ipv4Addr) -> Result<Vec<SwitchId>, PolicyError> {
        let (target, _) = self.attachment(ip).ok_or(PolicyError::NoRoute(ip))?;
        let mut path = vec![from];
        let mut cur = from;
        while cur != target {
            let port = self.next_hop(cur, target).ok_or(PolicyError::NoRoute(ip))?;
            match self.peer(cur, port) {
                Some(PortPeer::Switch { switch, .. }) => {
                    cur = *switch;
                    path.push(cur);
                }
                _ => return Err(PolicyError::NoRoute(ip)),
            }
        }
        Ok(path)
    }

    /// Neighbor switches of `sw`, ascending by id.
    pub fn neighbors(&self, sw: SwitchId) -> Vec<(SwitchId, PortId)> {
        let mut out: Vec<(SwitchId, PortId)> = self
            .links
            .iter()
            .filter_map(|l| {
                if l.a.0 == sw {
                    Some((l.b.0, l.a.1))
                } else if l.b.0 == sw {
                    Some((l.a.0, l.b.1))
                } else {
                    None
                }
            })
            .collect();
        out.sort();
        out
    }

    /// Average switch out-degree minus one, the `o` parameter of the
    /// obfuscation probability model. At least 1.0 by convention.
    pub fn avg_out_degree_minus_one(&self) -> f64 {
        if self.switch_ids.is_empty() {
            return 1.0;
        }
        let total: usize = self
            .switch_ids
            .iter()
            .map(|&s| self.neighbors(s).len())
            .sum();
        let avg = total as f64 / self.switch_ids.len() as f64;
        (avg - 1.0).max(1.0)
    }

    /// All simple switch paths of exactly `len` switches starting at `from`,
    /// in lexicographic order.
    pub fn simple_paths(&self, from: SwitchId, len: usize) -> Vec<Vec<SwitchId>> {
        let mut out = Vec::new();
        let mut stack = vec![from];
        self.extend_paths(&mut stack, len, &mut out);
        out
    }

    fn extend_paths(&self, stack: &mut Vec<SwitchId>, len: usize, out: &mut Vec<Vec<SwitchId>>) {
        if stack.len() == len {
            out.push(stack.clone());
            return;
        }
        let last = *stack.last().expect("non-empty");
        for (next, _) in self.neighbors(last) {
            if !stack.contains(&next) {
                stack.push(next);
                self.extend_paths(stack, len, out);
                stack.pop();
            }
        }
    }

    /// Port on `from` that leads to neighbor switch `to`.
    pub fn port_toward(&self, from: SwitchId, to: SwitchId) -> Option<PortId> {
        self.neighbors(from)
            .into_iter()
            .find(|(s, _)| *s == to)
            .map(|(_, p)| p)
    }
}
