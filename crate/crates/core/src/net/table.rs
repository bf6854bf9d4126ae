//! Flow rules and the per-switch flow table.

use serde::{Deserialize, Serialize};

use super::types::{Action, FlowKey, PacketHeader};
use super::{PortId, RuleId, SwitchId};
use crate::error::NetError;
use crate::net::event::SimTime;

/// A flow rule as installed on a switch. An empty action list drops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRule {
    pub rule_id: RuleId,
    pub matcher: FlowKey,
    pub priority: u32,
    pub actions: Vec<Action>,
    pub idle_timeout: Option<SimTime>,
    pub hard_timeout: Option<SimTime>,
    pub installed_at: SimTime,
    pub packet_count: u64,
    pub byte_count: u64,
    pub last_matched: Option<SimTime>,
}

impl FlowRule {
    pub fn is_drop(&self) -> bool {
        self.actions.is_empty() || self.actions.contains(&Action::Drop)
    }

    pub fn output_port(&self) -> Option<PortId> {
        self.actions.iter().find_map(|a| match a {
            Action::Forward(p) => Some(*p),
            _ => None,
        })
    }

    pub fn has_rate_limit(&self) -> bool {
        self.actions
            .iter()
            .any(|a| matches!(a, Action::RateLimit(_)))
    }

    pub fn has_set_field(&self) -> bool {
        self.actions
            .iter()
            .any(|a| matches!(a, Action::SetField(_)))
    }
}

/// What the controller asks a switch to install. The switch assigns the id
/// and stamps the install time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSpec {
    pub matcher: FlowKey,
    pub priority: u32,
    pub actions: Vec<Action>,
    pub idle_timeout: Option<SimTime>,
    pub hard_timeout: Option<SimTime>,
}

impl RuleSpec {
    pub fn new(matcher: FlowKey, priority: u32, actions: Vec<Action>) -> Self {
        RuleSpec {
            matcher,
            priority,
            actions,
            idle_timeout: None,
            hard_timeout: None,
        }
    }

    pub fn drop_rule(matcher: FlowKey, priority: u32) -> Self {
        RuleSpec::new(matcher, priority, Vec::new())
    }
}

/// Result of a table lookup. A miss is a value, not an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchOutcome {
    Rule(RuleId),
    Miss,
}

/// Ordered collection of flow rules with a capacity bound.
#[derive(Debug, Clone)]
pub struct FlowTable {
    rules: std::collections::BTreeMap<RuleId, FlowRule>,
    next_id: RuleId,
    capacity: usize,
}

impl FlowTable {
    pub fn new(capacity: usize) -> Self {
        FlowTable {
            rules: Default::default(),
            next_id: 1,
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, id: RuleId) -> Option<&FlowRule> {
        self.rules.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FlowRule> {
        self.rules.values()
    }

    /// Installs a rule, assigning the next rule id. Fails when at capacity.
    pub fn install(
        &mut self,
        switch: SwitchId,
        spec: RuleSpec,
        now: SimTime,
    ) -> Result<RuleId, NetError> {
        if self.rules.len() >= self.capacity {
            return Err(NetError::TableFull {
                switch,
                capacity: self.capacity,
            });
        }
        let rule_id = self.next_id;
        self.next_id += 1;
        self.rules.insert(
            rule_id,
            FlowRule {
                rule_id,
                matcher: spec.matcher,
                priority: spec.priority,
                actions: spec.actions,
                idle_timeout: spec.idle_timeout,
                hard_timeout: spec.hard_timeout,
                installed_at: now,
                packet_count: 0,
                byte_count: 0,
                last_matched: None,
            },
        );
        Ok(rule_id)
    }

    pub fn remove(&mut self, id: RuleId) -> Option<FlowRule> {
        self.rules.remove(&id)
    }

    /// Highest-priority match; ties broken by lowest rule id. Increments the
    /// matched rule's counters.
    pub fn lookup(&mut self, header: &PacketHeader, ingress: PortId, size: u64, now: SimTime) -> MatchOutcome {
        match best_match(self.rules.values(), header, ingress) {
            Some(id) => {
                let rule = self.rules.get_mut(&id).expect("matched rule exists");
                rule.packet_count += 1;
                rule.byte_count += size;
                rule.last_matched = Some(now);
                MatchOutcome::Rule(id)
            }
            None => MatchOutcome::Miss,
        }
    }

    /// Read-only variant of `lookup`, usable on snapshots.
    pub fn peek(&self, header: &PacketHeader, ingress: PortId) -> Option<&FlowRule> {
        best_match(self.rules.values(), header, ingress).and_then(|id| self.rules.get(&id))
    }

    /// Removes rules whose idle or hard timeout elapsed. Returns the removed
    /// rules with their final counters.
    pub fn expire(&mut self, now: SimTime) -> Vec<FlowRule> {
        let expired: Vec<RuleId> = self
            .rules
            .values()
            .filter(|r| rule_expired(r, now))
            .map(|r| r.rule_id)
            .collect();
        expired
            .into_iter()
            .filter_map(|id| self.rules.remove(&id))
            .collect()
    }

    /// Earliest instant at which any rule can expire, for scheduling.
    pub fn next_expiry(&self) -> Option<SimTime> {
        self.rules.values().filter_map(rule_deadline).min()
    }

    /// Immutable copy of every rule, ordered by rule id.
    pub fn snapshot(&self) -> Vec<FlowRule> {
        self.rules.values().cloned().collect()
    }
}

fn rule_deadline(rule: &FlowRule) -> Option<SimTime> {
    let idle = rule
        .idle_timeout
        .map(|t| rule.last_matched.unwrap_or(rule.installed_at) + t);
    let hard = rule.hard_timeout.map(|t| rule.installed_at + t);
    match (idle, hard) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

fn rule_expired(rule: &FlowRule, now: SimTime) -> bool {
    rule_deadline(rule).is_some_and(|d| d <= now)
}

/// Best match over an arbitrary rule collection (e.g. a snapshot):
/// highest priority, ties broken by lowest rule id.
pub fn best_match<'a, I>(rules: I, header: &PacketHeader, ingress: PortId) -> Option<RuleId>
where
    I: IntoIterator<Item = &'a FlowRule>,
{
    let mut best: Option<(u32, RuleId)> = None;
    for rule in rules {
        if !rule.matcher.matches(header, ingress) {
            continue;
        }
        let better = match best {
            None => true,
            Some((prio, id)) => {
                rule.priority > prio || (rule.priority == prio && rule.rule_id < id)
            }
        };
        if better {
            best = Some((rule.priority, rule.rule_id));
        }
    }
    best.map(|(_, id)| id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::types::{IpMatch, Packet, PacketKind};
    use proptest::prelude::*;

    fn pkt(dst: [u8; 4]) -> Packet {
        Packet::new(
            PacketKind::TcpSyn,
            [10, 0, 0, 1].into(),
            dst.into(),
            4000,
            80,
            60,
            1,
            SimTime::ZERO,
        )
    }

    fn fwd_spec(dst: IpMatch, priority: u32, port: PortId) -> RuleSpec {
        RuleSpec::new(
            FlowKey {
                dst,
                ..FlowKey::any()
            },
            priority,
            vec![Action::Forward(port)],
        )
    }

    #[test]
    fn single_candidate_matches() {
        let mut table = FlowTable::new(10);
        let id = table
            .install(
                1,
                fwd_spec(IpMatch::subnet([10, 0, 1, 0].into(), 24), 1, 2),
                SimTime::ZERO,
            )
            .unwrap();
        let p = pkt([10, 0, 1, 5]);
        assert_eq!(
            table.lookup(&p.header, 1, p.size, SimTime::ZERO),
            MatchOutcome::Rule(id)
        );
        assert_eq!(table.get(id).unwrap().packet_count, 1);
        assert_eq!(table.get(id).unwrap().byte_count, 60);
    }

    #[test]
    fn higher_priority_wins() {
        let mut table = FlowTable::new(10);
        table
            .install(
                1,
                fwd_spec(IpMatch::subnet([10, 0, 1, 0].into(), 24), 1, 2),
                SimTime::ZERO,
            )
            .unwrap();
        let narrow = table
            .install(
                1,
                fwd_spec(IpMatch::exact([10, 0, 1, 5].into()), 5, 3),
                SimTime::ZERO,
            )
            .unwrap();
        let p = pkt([10, 0, 1, 5]);
        assert_eq!(
            table.lookup(&p.header, 1, p.size, SimTime::ZERO),
            MatchOutcome::Rule(narrow)
        );
    }

    #[test]
    fn equal_priority_earliest_install_wins() {
        let mut table = FlowTable::new(10);
        let first = table
            .install(1, fwd_spec(IpMatch::ANY, 7, 2), SimTime::ZERO)
            .unwrap();
        table
            .install(1, fwd_spec(IpMatch::ANY, 7, 3), SimTime::ZERO)
            .unwrap();
        let p = pkt([10, 0, 1, 5]);
        assert_eq!(
            table.lookup(&p.header, 1, p.size, SimTime::ZERO),
            MatchOutcome::Rule(first)
        );
    }

    #[test]
    fn empty_table_misses() {
        let mut table = FlowTable::new(10);
        let p = pkt([10, 0, 1, 5]);
        assert_eq!(
            table.lookup(&p.header, 1, p.size, SimTime::ZERO),
            MatchOutcome::Miss
        );
    }

    #[test]
    fn first_install_gets_rule_id_one() {
        let mut table = FlowTable::new(10);
        let id = table
            .install(1, fwd_spec(IpMatch::ANY, 1, 2), SimTime::ZERO)
            .unwrap();
        assert_eq!(id, 1);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn install_at_capacity_fails() {
        let mut table = FlowTable::new(2);
        table
            .install(1, fwd_spec(IpMatch::ANY, 1, 2), SimTime::ZERO)
            .unwrap();
        table
            .install(1, fwd_spec(IpMatch::ANY, 1, 3), SimTime::ZERO)
            .unwrap();
        let err = table
            .install(1, fwd_spec(IpMatch::ANY, 1, 4), SimTime::ZERO)
            .unwrap_err();
        assert_eq!(
            err,
            NetError::TableFull {
                switch: 1,
                capacity: 2
            }
        );
    }

    #[test]
    fn idle_timeout_expires_after_last_match() {
        let mut table = FlowTable::new(10);
        let mut spec = fwd_spec(IpMatch::ANY, 1, 2);
        spec.idle_timeout = Some(SimTime::from_secs_f64(5.0));
        let id = table.install(1, spec, SimTime::ZERO).unwrap();
        let p = pkt([10, 0, 1, 5]);
        table.lookup(&p.header, 1, p.size, SimTime::from_secs_f64(1.0));
        assert!(table.expire(SimTime::from_secs_f64(5.9)).is_empty());
        let removed = table.expire(SimTime::from_secs_f64(6.0));
        assert_eq!(removed.len(), 1);
        assert_eq!(removed[0].rule_id, id);
    }

    #[test]
    fn rule_without_timeouts_never_expires() {
        let mut table = FlowTable::new(10);
        table
            .install(1, fwd_spec(IpMatch::ANY, 1, 2), SimTime::ZERO)
            .unwrap();
        assert!(table.expire(SimTime::from_secs_f64(1e6)).is_empty());
        assert_eq!(table.next_expiry(), None);
    }

    #[test]
    fn hard_timeout_beats_fresh_matches() {
        let mut table = FlowTable::new(10);
        let mut spec = fwd_spec(IpMatch::ANY, 1, 2);
        spec.idle_timeout = Some(SimTime::from_secs_f64(5.0));
        spec.hard_timeout = Some(SimTime::from_secs_f64(10.0));
        let id = table.install(1, spec, SimTime::ZERO).unwrap();
        let p = pkt([10, 0, 1, 5]);
        table.lookup(&p.header, 1, p.size, SimTime::from_secs_f64(9.0));
        let removed = table.expire(SimTime::from_secs_f64(10.0));
        assert_eq!(removed.len(), 1);
        assert_eq!(removed[0].rule_id, id);
    }

    #[test]
    fn drop_rule_has_empty_actions() {
        let spec = RuleSpec::drop_rule(FlowKey::src_only([10, 0, 0, 9].into()), 100);
        assert!(spec.actions.is_empty());
    }

    proptest! {
        /// Matching totality: any table and fully specified packet produce
        /// exactly one outcome, independent of rule insertion order.
        #[test]
        fn lookup_is_order_independent(
            prefixes in proptest::collection::vec((0u8..=32, 0u32..=255, 1u32..=5), 1..20),
            dst_last in 0u32..=255,
        ) {
            let mut table = FlowTable::new(100);
            for (prefix, last, prio) in &prefixes {
                let spec = fwd_spec(
                    IpMatch::subnet([10, 0, 1, *last as u8].into(), *prefix),
                    *prio,
                    2,
                );
                table.install(1, spec, SimTime::ZERO).unwrap();
            }
            let p = pkt([10, 0, 1, dst_last as u8]);
            let direct = best_match(table.iter(), &p.header, 1);

            // Same rules presented in reverse order must agree.
            let mut rules = table.snapshot();
            rules.reverse();
            let reversed = best_match(rules.iter(), &p.header, 1);
            prop_assert_eq!(direct, reversed);
        }

        /// Priority dominance: when a higher-priority rule's match set covers
        /// another rule's, packets in the covered set never match the
        /// lower-priority rule.
        #[test]
        fn priority_dominance(last in 0u32..=255, wide_prefix in 0u8..=24) {
            let mut table = FlowTable::new(10);
            let wide = fwd_spec(IpMatch::subnet([10, 0, 1, 0].into(), wide_prefix), 1, 2);
            let narrow = fwd_spec(IpMatch::exact([10, 0, 1, last as u8].into()), 5, 3);
            let wide_id = table.install(1, wide, SimTime::ZERO).unwrap();
            let narrow_id = table.install(1, narrow, SimTime::ZERO).unwrap();
            let p = pkt([10, 0, 1, last as u8]);
            let hit = best_match(table.iter(), &p.header, 1).unwrap();
            prop_assert_eq!(hit, narrow_id);
            prop_assert_ne!(hit, wide_id);
        }
    }
}
