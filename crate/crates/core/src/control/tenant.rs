//! Tag-based tenant routing and the co-residency signal.

use crate::error::PolicyError;
use crate::net::topology::Topology;
use crate::net::types::PacketHeader;
use crate::net::{PortId, SwitchId};

/// Routing decision for a tagged flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TenantRoute {
    pub out_port: PortId,
    /// True when the destination shares the ingress attachment, so the flow
    /// is sent back out the port it came from.
    pub co_resident: bool,
}

/// Routes a tagged packet within its tenant's address space. Destinations
/// co-resident with the sender (same switch and port) are forwarded out the
/// ingress port.
pub fn tenant_route(
    topo: &Topology,
    header: &PacketHeader,
    switch: SwitchId,
    ingress: PortId,
) -> Result<TenantRoute, PolicyError> {
    let tag = header.tenant_tag.ok_or(PolicyError::UnknownTenant)?;
    let dst_host = topo
        .hosts
        .iter()
        .find(|h| h.ip == header.dst && h.tenant == Some(tag))
        .ok_or(PolicyError::UnknownTenant)?;
    if dst_host.switch == switch && dst_host.port == ingress {
        return Ok(TenantRoute {
            out_port: ingress,
            co_resident: true,
        });
    }
    let out_port = topo.route_port(switch, header.dst)?;
    Ok(TenantRoute {
        out_port,
        co_resident: false,
    })
}
