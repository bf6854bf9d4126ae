//! The flow-table side-channel: a read-only view of one switch's rules.
//!
//! Reading through the side-channel never mutates switch state, so the
//! monitored switch's trajectory is identical with and without it attached.

use serde::Serialize;

use crate::error::NetError;
use crate::net::event::SimTime;
use crate::net::sim::Simulation;
use crate::net::table::FlowRule;
use crate::net::SwitchId;

/// Timestamped read-only copy of a switch's rules, counters included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableSnapshot {
    pub time: SimTime,
    pub rules: Vec<FlowRule>,
}

impl TableSnapshot {
    /// Rules present in `after` but not in `self`, and rules gone from it.
    pub fn delta<'a>(&'a self, after: &'a TableSnapshot) -> (Vec<&'a FlowRule>, Vec<&'a FlowRule>) {
        let added = after
            .rules
            .iter()
            .filter(|r| !self.rules.iter().any(|b| b.rule_id == r.rule_id))
            .collect();
        let removed = self
            .rules
            .iter()
            .filter(|r| !after.rules.iter().any(|a| a.rule_id == r.rule_id))
            .collect();
        (added, removed)
    }
}

/// Read-only handle on one switch's flow table. A zero poll interval takes a
/// fresh snapshot on every read; a positive interval models a stale
/// periodic poll.
#[derive(Debug)]
pub struct SideChannel {
    pub target: SwitchId,
    pub poll_interval: SimTime,
    last: Option<TableSnapshot>,
}

impl SideChannel {
    pub fn new(target: SwitchId, poll_interval: SimTime) -> Self {
        SideChannel {
            target,
            poll_interval,
            last: None,
        }
    }

    pub fn snapshot(&mut self, sim: &Simulation) -> Result<TableSnapshot, NetError> {
        let now = sim.now();
        if self.poll_interval > SimTime::ZERO {
            if let Some(last) = &self.last {
                if last.time + self.poll_interval > now {
                    return Ok(last.clone());
                }
            }
        }
        let snap = TableSnapshot {
            time: now,
            rules: sim.snapshot(self.target)?,
        };
        self.last = Some(snap.clone());
        Ok(snap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::controller::{Controller, ControllerConfig};
    use crate::net::switch::Switch;
    use crate::net::table::RuleSpec;
    use crate::net::topology::{Host, Topology};
    use crate::net::types::{Action, FlowKey};
    use std::collections::{BTreeMap, BTreeSet};

    fn mini_sim() -> Simulation {
        let topo = Topology::new(
            [1],
            vec![Host {
                name: "a".into(),
                ip: [10, 0, 0, 1].into(),
                switch: 1,
                port: 1,
                latency: SimTime::from_micros(1000),
                tenant: None,
                responsive: false,
            }],
            Vec::new(),
            Vec::new(),
        );
        let mut switches = BTreeMap::new();
        switches.insert(1, Switch::new(1, 100, false));
        Simulation::new(
            topo,
            switches,
            Controller::new(ControllerConfig::default()),
            BTreeSet::from([1]),
            Some(0),
        )
    }

    #[test]
    fn empty_table_gives_empty_snapshot() {
        let sim = mini_sim();
        let mut sc = SideChannel::new(1, SimTime::ZERO);
        let snap = sc.snapshot(&sim).unwrap();
        assert!(snap.rules.is_empty());
    }

    #[test]
    fn delta_mirrors_the_mutation() {
        let mut sim = mini_sim();
        let mut sc = SideChannel::new(1, SimTime::ZERO);
        let before = sc.snapshot(&sim).unwrap();
        sim.install_rule(
            1,
            RuleSpec::new(FlowKey::any(), 1, vec![Action::Forward(1)]),
        )
        .unwrap();
        let after = sc.snapshot(&sim).unwrap();
        let (added, removed) = before.delta(&after);
        assert_eq!(added.len(), 1);
        assert!(removed.is_empty());
    }

    #[test]
    fn consecutive_snapshots_without_events_are_identical() {
        let sim = mini_sim();
        let mut sc = SideChannel::new(1, SimTime::ZERO);
        let a = sc.snapshot(&sim).unwrap();
        let b = sc.snapshot(&sim).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_leaves_the_switch_bit_identical() {
        let mut sim = mini_sim();
        sim.install_rule(
            1,
            RuleSpec::new(FlowKey::any(), 1, vec![Action::Forward(1)]),
        )
        .unwrap();
        let before = sim.snapshot(1).unwrap();
        let mut sc = SideChannel::new(1, SimTime::ZERO);
        let _ = sc.snapshot(&sim).unwrap();
        let _ = sc.snapshot(&sim).unwrap();
        assert_eq!(before, sim.snapshot(1).unwrap());
    }

    #[test]
    fn positive_poll_interval_serves_stale_reads() {
        let mut sim = mini_sim();
        let mut sc = SideChannel::new(1, SimTime::from_secs_f64(1.0));
        let a = sc.snapshot(&sim).unwrap();
        sim.install_rule(
            1,
            RuleSpec::new(FlowKey::any(), 1, vec![Action::Forward(1)]),
        )
        .unwrap();
        // still inside the poll interval: the stale view is returned
        let b = sc.snapshot(&sim).unwrap();
        assert_eq!(a, b);
    }
}
