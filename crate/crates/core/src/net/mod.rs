//! Data plane: packets, flow tables, switches, topology and the
//! discrete-event scheduler.

pub mod event;
pub mod sim;
pub mod switch;
pub mod table;
pub mod topology;
pub mod types;

/// Switch identifier.
pub type SwitchId = u32;
/// Port identifier, unique per switch.
pub type PortId = u32;
/// Host index into the topology's host list.
pub type HostId = usize;
/// Flow rule identifier, unique per switch and monotonically increasing.
pub type RuleId = u64;

pub use sim::Simulation;
pub use switch::Switch;
pub use topology::{Host, Link, StubSubnet, Topology};
