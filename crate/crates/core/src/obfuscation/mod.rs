//! Flow obfuscation: header-rewrite chains that delay policy enforcement to
//! the k-th hop, plus the analytical and Monte Carlo models of the
//! attacker's success probability.

pub mod ledger;
pub mod plan;
pub mod probability;

pub use ledger::RewriteLedger;
pub use plan::{ObfuscationPlan, ObfuscationSettings, RewritePool};
pub use probability::{choose_k, monte_carlo_success, p_success, sweep, ObfuscationParams, SweepCell};
