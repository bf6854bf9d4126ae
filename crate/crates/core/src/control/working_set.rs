//! Working-set rate limiting for new flows.
//!
//! Each host owns a working set of recently contacted destinations. Flows
//! toward destinations inside the set get rules immediately. Flows toward
//! destinations outside the set are withheld for a delay, then forwarded
//! once without a rule; the rule is installed only after a positive reply
//! from the destination.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::net::event::SimTime;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkingSetConfig {
    /// Maximum destinations remembered per host.
    pub capacity: usize,
    /// Seconds an entry stays in the working set.
    pub entry_lifetime_secs: f64,
    /// Seconds to withhold the rule for out-of-set destinations.
    pub install_delay_secs: f64,
}

impl WorkingSetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity == 0 {
            return Err("working set capacity must be >= 1".into());
        }
        Ok(())
    }

    pub fn install_delay(&self) -> SimTime {
        SimTime::from_secs_f64(self.install_delay_secs)
    }

    pub fn entry_lifetime(&self) -> SimTime {
        SimTime::from_secs_f64(self.entry_lifetime_secs)
    }
}

/// Per-host working sets plus the flows awaiting a positive reply.
#[derive(Debug, Default)]
pub struct WorkingSets {
    /// host -> dst -> insertion time
    sets: BTreeMap<Ipv4Addr, BTreeMap<Ipv4Addr, SimTime>>,
    /// (src, dst) pairs forwarded without a rule, awaiting a reply.
    awaiting_reply: BTreeMap<(Ipv4Addr, Ipv4Addr), SimTime>,
}

impl WorkingSets {
    pub fn contains(&self, cfg: &WorkingSetConfig, src: Ipv4Addr, dst: Ipv4Addr, now: SimTime) -> bool {
        self.sets
            .get(&src)
            .and_then(|s| s.get(&dst))
            .is_some_and(|at| *at + cfg.entry_lifetime() > now)
    }

    pub fn insert(&mut self, cfg: &WorkingSetConfig, src: Ipv4Addr, dst: Ipv4Addr, now: SimTime) {
        let set = self.sets.entry(src).or_default();
        set.retain(|_, at| *at + cfg.entry_lifetime() > now);
        set.insert(dst, now);
        // evict the oldest entry beyond capacity
        while set.len() > cfg.capacity {
            let oldest = set
                .iter()
                .min_by_key(|(ip, at)| (**at, **ip))
                .map(|(ip, _)| *ip)
                .expect("non-empty");
            set.remove(&oldest);
        }
    }

    pub fn mark_awaiting_reply(&mut self, src: Ipv4Addr, dst: Ipv4Addr, now: SimTime) {
        self.awaiting_reply.insert((src, dst), now);
    }

    /// Called when a reply from `replier` to `initiator` transits. Returns
    /// true when the pair was awaiting a reply; the caller installs the rule
    /// and the destination joins the working set.
    pub fn resolve_reply(
        &mut self,
        cfg: &WorkingSetConfig,
        initiator: Ipv4Addr,
        replier: Ipv4Addr,
        now: SimTime,
    ) -> bool {
        if self.awaiting_reply.remove(&(initiator, replier)).is_some() {
            self.insert(cfg, initiator, replier, now);
            true
        } else {
            false
        }
    }

    pub fn is_awaiting(&self, src: Ipv4Addr, dst: Ipv4Addr) -> bool {
        self.awaiting_reply.contains_key(&(src, dst))
    }
}
