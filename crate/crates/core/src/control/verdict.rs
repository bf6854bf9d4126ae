//! The verdict a packet-in receives from the policy pipeline.

use crate::net::event::SimTime;
use crate::net::table::RuleSpec;
use crate::net::types::Packet;
use crate::net::{PortId, SwitchId};

/// Exactly one verdict is produced per packet-in per pipeline pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyVerdict {
    /// Install a rule on a switch, then let the packet traverse it.
    InstallRule(SwitchId, RuleSpec),
    /// Install several rules atomically (obfuscation chains), then let the
    /// packet traverse the first switch.
    InstallRuleChain(Vec<(SwitchId, RuleSpec)>),
    /// Forward this one packet out a port without installing anything.
    PacketOutNoRule {
        switch: SwitchId,
        port: PortId,
        packet: Packet,
    },
    /// Drop the packet and leave the flow table untouched.
    SilentDrop,
    /// Re-evaluate the packet-in after a delay.
    Defer(SimTime),
}
