//! Error types shared across the crate.

use thiserror::Error;

/// Data-plane errors raised by switches and the event engine.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    /// The flow table is at capacity and the install was rejected.
    #[error("flow table full on switch {switch} (capacity {capacity})")]
    TableFull { switch: u32, capacity: usize },
    /// A packet referenced a port the switch does not have.
    #[error("unknown port {port} on switch {switch}")]
    UnknownPort { switch: u32, port: u32 },
    /// An id referenced a switch that does not exist.
    #[error("unknown switch {0}")]
    UnknownSwitch(u32),
}

/// Control-plane errors raised by policy applications.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    /// No route exists toward the destination.
    #[error("no route to {0}")]
    NoRoute(std::net::Ipv4Addr),
    /// An address fell outside every configured subnet.
    #[error("address {0} not covered by any configured subnet")]
    UnknownSubnet(std::net::Ipv4Addr),
    /// A packet required tenant routing but carried no known tenant tag.
    #[error("unknown or missing tenant tag")]
    UnknownTenant,
    /// An outcome was reported for a connection that was never pending.
    #[error("no pending connection for {src} -> {dst}")]
    UnknownPending {
        src: std::net::Ipv4Addr,
        dst: std::net::Ipv4Addr,
    },
}

/// Errors raised by the attacker's inference operations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReconError {
    /// No credit-gated burst pattern was found in the observation records.
    #[error("no credit-gated burst pattern in the records")]
    PatternNotFound,
    /// All probe batches shared one outcome, so no boundary can be bracketed.
    #[error("all batches shared one outcome; boundary cannot be estimated")]
    InsufficientCoverage,
    /// A detection event fired during a campaign that required stealth.
    #[error("detection triggered during a stealth campaign")]
    DetectionTriggered,
    /// A fresh flow produced an exact rule, so no aggregation policy exists.
    #[error("no wildcard rule observed for a fresh flow")]
    NoWildcardObserved,
    /// No destination pair with distinct baseline output ports exists.
    #[error("no destination pair with distinct output ports")]
    NoPortDistinctPair,
}

/// Errors raised by the obfuscation planner.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ObfuscationError {
    /// The topology has no simple path of the requested length.
    #[error("no simple path of {wanted} switches from switch {ingress}")]
    PathTooShort { ingress: u32, wanted: usize },
    /// A switch on the path was at capacity; the plan was rolled back.
    #[error("table full on switch {0}; plan rolled back")]
    TableFull(u32),
}

/// Errors raised while loading, validating or running scenarios.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    /// The file is not syntactically valid. Carries line/column context.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    /// The file parsed but violated one or more schema constraints.
    #[error("invalid scenario: {}", violations.join("; "))]
    Validation { violations: Vec<String> },
    /// A figure was requested from a run that lacks the campaign behind it.
    #[error("run has no data for {0}")]
    MissingCampaignData(&'static str),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Obfuscation(#[from] ObfuscationError),
}
