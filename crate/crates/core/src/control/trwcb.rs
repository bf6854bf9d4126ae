//! Threshold random walk scan detection with credit-based limiting.
//!
//! Each source host owns a credit balance that gates first-contact
//! connections and a sequential hypothesis test over connection outcomes.
//! The log-likelihood walk moves by `ln(theta1/theta0)` on a success and
//! `ln((1-theta1)/(1-theta0))` on a failure. Crossing the upper bound
//! `ln((1-beta)/alpha)` flags the source as a scanner; crossing the lower
//! bound `ln(beta/(1-alpha))` accepts it as benign and resets the walk, so
//! long-running hosts stay monitorable.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::net::event::SimTime;

/// Detector parameters. Defaults follow the classic credit-based
/// configuration: 10 starting credits, 2 credits per success, target false
/// positive rate 5e-5 and target detection probability 0.99.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrwCbConfig {
    pub base_credit: u32,
    pub success_reward: u32,
    /// Target false positive rate.
    pub alpha: f64,
    /// Target miss rate; detection probability is 1 - beta.
    pub beta: f64,
    /// P(connection succeeds | benign host).
    pub theta0: f64,
    /// P(connection succeeds | scanner).
    pub theta1: f64,
    /// Seconds a pending first contact may wait for a reply.
    pub connection_timeout_secs: f64,
}

impl Default for TrwCbConfig {
    fn default() -> Self {
        TrwCbConfig {
            base_credit: 10,
            success_reward: 2,
            alpha: 0.00005,
            beta: 0.01,
            theta0: 0.8,
            theta1: 0.2,
            connection_timeout_secs: 1.0,
        }
    }
}

impl TrwCbConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.theta1 > 0.0 && self.theta1 < self.theta0 && self.theta0 < 1.0) {
            return Err(format!(
                "trwcb requires 0 < theta1 < theta0 < 1, got theta0={} theta1={}",
                self.theta0, self.theta1
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.beta > 0.0 && self.beta < 1.0) {
            return Err("trwcb requires 0 < alpha, beta < 1".into());
        }
        if self.base_credit < 1 {
            return Err("trwcb requires base_credit >= 1".into());
        }
        Ok(())
    }

    /// Walk increment for a successful connection (negative).
    pub fn success_step(&self) -> f64 {
        (self.theta1 / self.theta0).ln()
    }

    /// Walk increment for a failed connection (positive).
    pub fn failure_step(&self) -> f64 {
        ((1.0 - self.theta1) / (1.0 - self.theta0)).ln()
    }

    /// Upper stopping bound; crossing it flags a scanner.
    pub fn upper_bound(&self) -> f64 {
        ((1.0 - self.beta) / self.alpha).ln()
    }

    /// Lower stopping bound; crossing it accepts the host as benign.
    pub fn lower_bound(&self) -> f64 {
        (self.beta / (1.0 - self.alpha)).ln()
    }

    pub fn connection_timeout(&self) -> SimTime {
        SimTime::from_secs_f64(self.connection_timeout_secs)
    }
}

/// Whether a pending connection resolved with a reply or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HostStatus {
    #[default]
    Benign,
    /// Absorbing until operator reset.
    Blocked,
}

/// Per-source detector state.
#[derive(Debug, Clone, Default)]
pub struct TrwCbHostState {
    pub credits: u32,
    /// Destinations awaiting a reply, with their deadlines.
    pub pending: BTreeMap<Ipv4Addr, SimTime>,
    /// Destinations this source has ever attempted.
    pub contacted: BTreeSet<Ipv4Addr>,
    /// Sequential test statistic in the log domain.
    pub log_likelihood: f64,
    pub status: HostStatus,
    /// Count of resolved outcomes, used to report the detection step.
    pub outcomes_seen: u32,
}

/// What the detector asks the controller to do with a first contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstContactDecision {
    /// Decremented a credit; forward and await the outcome.
    Forward,
    /// Out of credits or blocked; drop without installing anything.
    SilentDrop,
}

/// Result of resolving an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutcomeResolution {
    /// The walk crossed the upper bound on this outcome; the source must be
    /// blocked with a drop rule.
    pub detected: bool,
    /// 1-based index of this outcome in the source's history.
    pub outcome_index: u32,
}

/// The full detector: per-source states plus the shared configuration.
#[derive(Debug, Clone, Default)]
pub struct TrwCb {
    pub config: TrwCbConfig,
    pub hosts: BTreeMap<Ipv4Addr, TrwCbHostState>,
}

impl TrwCb {
    pub fn new(config: TrwCbConfig) -> Self {
        TrwCb {
            config,
            hosts: BTreeMap::new(),
        }
    }

    fn host_mut(&mut self, src: Ipv4Addr) -> &mut TrwCbHostState {
        let base = self.config.base_credit;
        self.hosts.entry(src).or_insert_with(|| TrwCbHostState {
            credits: base,
            ..Default::default()
        })
    }

    pub fn is_blocked(&self, src: Ipv4Addr) -> bool {
        self.hosts
            .get(&src)
            .is_some_and(|h| h.status == HostStatus::Blocked)
    }

    /// True when `dst` counts as a first contact for `src`: never pending
    /// and never previously contacted.
    pub fn is_first_contact(&self, src: Ipv4Addr, dst: Ipv4Addr) -> bool {
        self.hosts
            .get(&src)
            .is_none_or(|h| !h.contacted.contains(&dst))
    }

    /// Handles a first-contact connection request. On `Forward` the caller
    /// must schedule a timeout at the returned deadline.
    pub fn on_first_contact(
        &mut self,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        now: SimTime,
    ) -> (FirstContactDecision, Option<SimTime>) {
        let timeout = self.config.connection_timeout();
        let host = self.host_mut(src);
        if host.status == HostStatus::Blocked {
            return (FirstContactDecision::SilentDrop, None);
        }
        if host.credits == 0 {
            // no credits: dropped silently, with no detection event
            return (FirstContactDecision::SilentDrop, None);
        }
        host.credits -= 1;
        host.contacted.insert(dst);
        let deadline = now + timeout;
        host.pending.insert(dst, deadline);
        (FirstContactDecision::Forward, Some(deadline))
    }

    /// Resolves a pending connection. Returns `None` when nothing was
    /// pending for the pair (e.g. a reply arriving after its timeout).
    pub fn on_outcome(
        &mut self,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        outcome: Outcome,
    ) -> Option<OutcomeResolution> {
        let success_step = self.config.success_step();
        let failure_step = self.config.failure_step();
        let upper = self.config.upper_bound();
        let lower = self.config.lower_bound();
        let reward = self.config.success_reward;

        let host = self.hosts.get_mut(&src)?;
        host.pending.remove(&dst)?;
        if host.status == HostStatus::Blocked {
            // blocked is absorbing: late outcomes resolve silently
            return None;
        }
        host.outcomes_seen += 1;
        match outcome {
            Outcome::Success => {
                host.credits += reward;
                host.log_likelihood += success_step;
            }
            Outcome::Failure => {
                host.log_likelihood += failure_step;
            }
        }
        let mut detected = false;
        if host.log_likelihood >= upper {
            host.status = HostStatus::Blocked;
            detected = true;
        } else if host.log_likelihood <= lower {
            // benign acceptance restarts the test instead of ending it
            host.log_likelihood = 0.0;
        }
        Some(OutcomeResolution {
            detected,
            outcome_index: host.outcomes_seen,
        })
    }

    /// Pending entries of `src` whose deadline is at or before `now`.
    pub fn due_pending(&self, src: Ipv4Addr, dst: Ipv4Addr, now: SimTime) -> bool {
        self.hosts
            .get(&src)
            .and_then(|h| h.pending.get(&dst))
            .is_some_and(|d| *d <= now)
    }
}
