//! Control plane: the controller framework and its policy applications.

pub mod access;
pub mod aggregation;
pub mod controller;
pub mod dos;
pub mod router;
pub mod tenant;
pub mod trwcb;
pub mod verdict;
pub mod working_set;

pub use access::AccessMatrix;
pub use aggregation::AggregationConfig;
pub use controller::{Controller, ControllerConfig, PolicySet};
pub use dos::{DosResponse, DosThresholdConfig};
pub use trwcb::{TrwCbConfig, TrwCbHostState};
pub use verdict::PolicyVerdict;
pub use working_set::WorkingSetConfig;
