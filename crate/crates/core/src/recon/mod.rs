//! The attacker: a read-only flow-table side-channel, probe traffic
//! generators, and the inference engine correlating probes to rule deltas.

pub mod campaign;
pub mod classify;
pub mod estimate;
pub mod probe;
pub mod report;
pub mod side_channel;

pub use campaign::CampaignOutput;
pub use probe::{ObservationRecord, ProbeBatch, ProbeKind};
pub use report::{InferenceReport, Mechanism};
pub use side_channel::{SideChannel, TableSnapshot};
