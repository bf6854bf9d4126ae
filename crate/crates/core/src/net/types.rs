//! Packets, match keys and rule actions.

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::PortId;
use crate::net::event::SimTime;

/// IP protocol carried by a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IpProto {
    Tcp,
    Udp,
    Icmp,
}

/// TCP flag set, stored as a small bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const NONE: TcpFlags = TcpFlags(0);
    pub const SYN: TcpFlags = TcpFlags(0b001);
    pub const ACK: TcpFlags = TcpFlags(0b010);
    pub const RST: TcpFlags = TcpFlags(0b100);
    pub const SYN_ACK: TcpFlags = TcpFlags(0b011);

    pub fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.contains(TcpFlags::SYN) {
            parts.push("SYN");
        }
        if self.contains(TcpFlags::ACK) {
            parts.push("ACK");
        }
        if self.contains(TcpFlags::RST) {
            parts.push("RST");
        }
        if parts.is_empty() {
            write!(f, "-")
        } else {
            write!(f, "{}", parts.join("+"))
        }
    }
}

/// An IPv4 address with a prefix length. Prefix 0 matches every address.
/// Serialized in CIDR notation ("10.0.1.0/24"; a bare address means /32).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct IpMatch {
    pub addr: Ipv4Addr,
    pub prefix: u8,
}

impl std::str::FromStr for IpMatch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, prefix) = match s.split_once('/') {
            Some((a, p)) => (
                a.parse::<Ipv4Addr>().map_err(|e| e.to_string())?,
                p.parse::<u8>().map_err(|e| e.to_string())?,
            ),
            None => (s.parse::<Ipv4Addr>().map_err(|e| e.to_string())?, 32),
        };
        if prefix > 32 {
            return Err(format!("prefix {prefix} out of range"));
        }
        Ok(IpMatch { addr, prefix })
    }
}

impl Serialize for IpMatch {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for IpMatch {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl IpMatch {
    pub const ANY: IpMatch = IpMatch {
        addr: Ipv4Addr::UNSPECIFIED,
        prefix: 0,
    };

    pub fn exact(addr: Ipv4Addr) -> Self {
        IpMatch { addr, prefix: 32 }
    }

    pub fn subnet(addr: Ipv4Addr, prefix: u8) -> Self {
        debug_assert!(prefix <= 32);
        IpMatch { addr, prefix }
    }

    fn mask(self) -> u32 {
        if self.prefix == 0 {
            0
        } else {
            u32::MAX << (32 - self.prefix)
        }
    }

    pub fn matches(self, ip: Ipv4Addr) -> bool {
        let m = self.mask();
        u32::from(self.addr) & m == u32::from(ip) & m
    }

    /// True when every address matched by `other` is also matched by `self`.
    pub fn covers(self, other: IpMatch) -> bool {
        self.prefix <= other.prefix && self.matches(other.addr)
    }

    pub fn is_exact(self) -> bool {
        self.prefix == 32
    }
}

impl fmt::Display for IpMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.prefix == 32 {
            write!(f, "{}", self.addr)
        } else {
            write!(f, "{}/{}", self.addr, self.prefix)
        }
    }
}

/// Wildcard-capable match over a packet header. `None` fields match anything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowKey {
    pub src: IpMatch,
    pub dst: IpMatch,
    pub proto: Option<IpProto>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub tcp_flags: Option<TcpFlags>,
    pub ingress_port: Option<PortId>,
    pub tenant_tag: Option<u16>,
}

impl FlowKey {
    /// Key that matches every packet.
    pub fn any() -> Self {
        FlowKey {
            src: IpMatch::ANY,
            dst: IpMatch::ANY,
            proto: None,
            src_port: None,
            dst_port: None,
            tcp_flags: None,
            ingress_port: None,
            tenant_tag: None,
        }
    }

    /// Fully specified key derived from a packet header. Matching is
    /// reflexive for the packet the key was derived from.
    pub fn exact(header: &PacketHeader) -> Self {
        FlowKey {
            src: IpMatch::exact(header.src),
            dst: IpMatch::exact(header.dst),
            proto: Some(header.proto),
            src_port: Some(header.src_port),
            dst_port: Some(header.dst_port),
            tcp_flags: Some(header.tcp_flags),
            ingress_port: None,
            tenant_tag: header.tenant_tag,
        }
    }

    /// Exact on addresses and ports but wildcard on flags, so replies and
    /// data packets of the connection match the same rule.
    pub fn exact_pair(header: &PacketHeader) -> Self {
        FlowKey {
            tcp_flags: None,
            ..FlowKey::exact(header)
        }
    }

    pub fn src_only(src: Ipv4Addr) -> Self {
        FlowKey {
            src: IpMatch::exact(src),
            ..FlowKey::any()
        }
    }

    pub fn matches(&self, header: &PacketHeader, ingress: PortId) -> bool {
        self.src.matches(header.src)
            && self.dst.matches(header.dst)
            && self.proto.is_none_or(|p| p == header.proto)
            && self.src_port.is_none_or(|p| p == header.src_port)
            && self.dst_port.is_none_or(|p| p == header.dst_port)
            && self.tcp_flags.is_none_or(|fl| fl == header.tcp_flags)
            && self.ingress_port.is_none_or(|p| p == ingress)
            && self
                .tenant_tag
                .is_none_or(|t| header.tenant_tag == Some(t))
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src, self.dst)?;
        if let Some(p) = self.proto {
            write!(f, " {p:?}")?;
        }
        if let Some(p) = self.dst_port {
            write!(f, " dport={p}")?;
        }
        if let Some(fl) = self.tcp_flags {
            write!(f, " flags={fl}")?;
        }
        if let Some(t) = self.tenant_tag {
            write!(f, " tenant={t}")?;
        }
        Ok(())
    }
}

/// A single header-field write applied by a `SetField` action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldWrite {
    SrcIp(Ipv4Addr),
    DstIp(Ipv4Addr),
    SrcPort(u16),
    DstPort(u16),
    TenantTag(u16),
}

/// Rule action. An empty action list on a rule is equivalent to `Drop`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Forward(PortId),
    Drop,
    SetField(FieldWrite),
    /// Bandwidth cap in bytes/second, carried in the rule itself.
    RateLimit(u64),
    SendToController,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Forward(p) => write!(f, "fwd({p})"),
            Action::Drop => write!(f, "drop"),
            Action::SetField(FieldWrite::SrcIp(ip)) => write!(f, "set(src={ip})"),
            Action::SetField(FieldWrite::DstIp(ip)) => write!(f, "set(dst={ip})"),
            Action::SetField(FieldWrite::SrcPort(p)) => write!(f, "set(sport={p})"),
            Action::SetField(FieldWrite::DstPort(p)) => write!(f, "set(dport={p})"),
            Action::SetField(FieldWrite::TenantTag(t)) => write!(f, "set(tenant={t})"),
            Action::RateLimit(b) => write!(f, "ratelimit({b})"),
            Action::SendToController => write!(f, "to_controller"),
        }
    }
}

/// Fully specified packet header. No wildcard components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PacketHeader {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub proto: IpProto,
    pub src_port: u16,
    pub dst_port: u16,
    pub tcp_flags: TcpFlags,
    pub tenant_tag: Option<u16>,
}

impl PacketHeader {
    pub fn apply(&mut self, write: FieldWrite) {
        match write {
            FieldWrite::SrcIp(ip) => self.src = ip,
            FieldWrite::DstIp(ip) => self.dst = ip,
            FieldWrite::SrcPort(p) => self.src_port = p,
            FieldWrite::DstPort(p) => self.dst_port = p,
            FieldWrite::TenantTag(t) => self.tenant_tag = Some(t),
        }
    }

    /// The header a reply to this packet would carry.
    pub fn reversed(&self) -> PacketHeader {
        PacketHeader {
            src: self.dst,
            dst: self.src,
            src_port: self.dst_port,
            dst_port: self.src_port,
            ..*self
        }
    }
}

/// Packet category, used by hosts and the SYN-proxy branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacketKind {
    TcpSyn,
    TcpSynAck,
    TcpData,
    TcpRst,
    Udp,
    Icmp,
}

impl PacketKind {
    pub fn proto(self) -> IpProto {
        match self {
            PacketKind::Udp => IpProto::Udp,
            PacketKind::Icmp => IpProto::Icmp,
            _ => IpProto::Tcp,
        }
    }

    pub fn flags(self) -> TcpFlags {
        match self {
            PacketKind::TcpSyn => TcpFlags::SYN,
            PacketKind::TcpSynAck => TcpFlags::SYN_ACK,
            PacketKind::TcpData => TcpFlags::ACK,
            PacketKind::TcpRst => TcpFlags::RST,
            _ => TcpFlags::NONE,
        }
    }
}

/// A packet in flight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub header: PacketHeader,
    pub size: u64,
    pub kind: PacketKind,
    /// Opaque correlation id assigned by the sender.
    pub flow_id: u64,
    pub created_at: SimTime,
}

impl Packet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: PacketKind,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        src_port: u16,
        dst_port: u16,
        size: u64,
        flow_id: u64,
        created_at: SimTime,
    ) -> Self {
        Packet {
            header: PacketHeader {
                src,
                dst,
                proto: kind.proto(),
                src_port,
                dst_port,
                tcp_flags: kind.flags(),
                tenant_tag: None,
            },
            size,
            kind,
            flow_id,
            created_at,
        }
    }

    /// The SYN-ACK a responsive host (or the SYN proxy) answers with.
    pub fn syn_ack_reply(&self, at: SimTime) -> Packet {
        Packet {
            header: PacketHeader {
                tcp_flags: TcpFlags::SYN_ACK,
                ..self.header.reversed()
            },
            size: 60,
            kind: PacketKind::TcpSynAck,
            flow_id: self.flow_id,
            created_at: at,
        }
    }
}

/// Identity of a connection attempt: initiator and responder addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ConnPair {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn wildcard_matches_everything() {
        let key = FlowKey::any();
        assert!(key.matches(&header([10, 0, 0, 1], [10, 0, 1, 5]), 3));
        assert!(key.matches(&header([192, 168, 0, 9], [8, 8, 8, 8]), 77));
    }

    #[test]
    fn exact_key_is_reflexive() {
        let h = header([10, 0, 0, 7], [10, 0, 1, 9]);
        assert!(FlowKey::exact(&h).matches(&h, 1));
    }

    #[test]
    fn prefix_match_scopes_to_subnet() {
        let m = IpMatch::subnet([10, 0, 1, 0].into(), 24);
        assert!(m.matches([10, 0, 1, 5].into()));
        assert!(!m.matches([10, 0, 2, 5].into()));
        assert!(IpMatch::ANY.matches([1, 2, 3, 4].into()));
    }

    #[test]
    fn covers_orders_by_specificity() {
        let wide = IpMatch::subnet([10, 0, 0, 0].into(), 8);
        let narrow = IpMatch::subnet([10, 0, 1, 0].into(), 24);
        assert!(wide.covers(narrow));
        assert!(!narrow.covers(wide));
    }

    #[test]
    fn set_field_rewrites_header() {
        let mut h = header([10, 0, 0, 1], [10, 0, 1, 5]);
        h.apply(FieldWrite::SrcIp([198, 18, 0, 1].into()));
        assert_eq!(h.src, Ipv4Addr::new(198, 18, 0, 1));
        assert_eq!(h.dst, Ipv4Addr::new(10, 0, 1, 5));
    }

    #[test]
    fn tenant_tag_must_match_when_specified() {
        let mut h = header([10, 0, 0, 1], [10, 0, 1, 5]);
        let key = FlowKey {
            tenant_tag: Some(7),
            ..FlowKey::any()
        };
        assert!(!key.matches(&h, 1));
        h.tenant_tag = Some(7);
        assert!(key.matches(&h, 1));
    }
}
