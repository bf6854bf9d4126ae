//! Deterministic simulator of an SDN data/control plane, an attacker that
//! reconstructs network configuration through a flow-table side-channel, and
//! a flow-obfuscation countermeasure.
//!
//! The crate is organized around five subsystems:
//!
//! - [`net`]: packets, flow tables, switches, topology and the discrete-event
//!   engine that drives everything.
//! - [`control`]: the controller framework and the policy applications it
//!   dispatches packet-in events to (baseline routing, TRW-CB scan detection,
//!   access control, flow aggregation, working-set delay, DoS thresholds,
//!   tenant routing).
//! - [`recon`]: the attacker. Probe-traffic generators, the read-only
//!   side-channel, and the inference engine that correlates probes to rule
//!   deltas.
//! - [`obfuscation`]: k-hop header-rewrite chains that delay policy
//!   enforcement, plus the analytical and Monte Carlo success-probability
//!   models.
//! - [`scenario`]: scenario files, the experiment runner, and figure/CSV
//!   outputs.
//!
//! Simulations are single-threaded and fully deterministic: the same scenario
//! and seed produce byte-identical traces and output files.

pub mod control;
pub mod error;
pub mod net;
pub mod obfuscation;
pub mod recon;
pub mod scenario;

pub use error::{NetError, PolicyError, ReconError, ScenarioError};
pub use net::event::{SimTime, Trace, TraceKind, TraceRecord};
pub use net::table::{FlowRule, FlowTable, MatchOutcome};
pub use net::types::{Action, FlowKey, IpMatch, Packet, PacketHeader, PacketKind, TcpFlags};
pub use net::{HostId, PortId, RuleId, SwitchId};
pub use recon::report::{InferenceReport, Mechanism};
pub use scenario::{load_scenario, run_experiment, ExperimentResult, Scenario};
