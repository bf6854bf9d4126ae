//! Fingerprinting: map observation records to the defense mechanism that
//! produced them.
//!
//! Decision rules, in precedence order: an answered-without-rules SYN sweep
//! is a whitehole proxy; a drop rule on the attacker flow is traffic
//! filtering; a rule carrying a rate-limit action is rate limiting; flows to
//! port-distinct destinations converging on one port were redirected;
//! burst-gated replies under a constant probe rate are credit-based
//! limiting; replies landing right on rule installation for far hosts mean
//! delayed installs; a delta of plain forwarding rules only is no policy.
//! Anything else stays unknown.

use crate::net::event::SimTime;
use crate::recon::estimate::success_bursts;
use crate::recon::probe::{detection_in_added, rules_matching_flow, ObservationRecord, ProbeKind};
use crate::recon::report::Mechanism;

/// Timing knobs for the classifier.
#[derive(Debug, Clone, Copy)]
pub struct ClassifyParams {
    /// A reply this close after rule installation means the rule was
    /// withheld until the reply came back.
    pub reply_epsilon: SimTime,
    /// Minimum installation delay that counts as withholding.
    pub min_install_delay: SimTime,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        ClassifyParams {
            reply_epsilon: SimTime::from_secs_f64(0.01),
            min_install_delay: SimTime::from_secs_f64(0.05),
        }
    }
}

/// The whitehole check: every probe answered, including dark and
/// self-directed ones, and no rule matching any probe flow was installed.
fn syn_proxy_signature(record: &ObservationRecord) -> bool {
    if record.issued == 0 {
        return false;
    }
    let bitmap = record.bitmap();
    if !bitmap.iter().all(|&b| b) {
        return false;
    }
    // at least one probe must be one a real host could not answer
    let has_dark = record
        .batch
        .targets
        .iter()
        .take(record.issued)
        .any(|t| !t.expect_reply);
    if !has_dark {
        return false;
    }
    (0..record.issued).all(|i| {
        rules_matching_flow(&record.delta.added, &record.probe_header(i)).is_empty()
    })
}

fn rate_limit_signature(record: &ObservationRecord) -> bool {
    record
        .delta
        .added
        .iter()
        .any(|(_, _, r)| r.has_rate_limit() && r.matcher.src.matches(record.batch.src_ip))
}

/// Port-distinct destinations converging on one output port after the
/// high-profile phase.
fn redirection_signature(record: &ObservationRecord) -> bool {
    if record.baseline_ports.len() < 2 || record.post_ports.len() < 2 {
        return false;
    }
    let mut baselines: Vec<u32> = record.baseline_ports.iter().map(|(_, p)| *p).collect();
    baselines.sort_unstable();
    baselines.dedup();
    if baselines.len() < 2 {
        return false;
    }
    let first = record.post_ports[0].1;
    let converged = record.post_ports.iter().all(|(_, p)| *p == first);
    let departed = record
        .baseline_ports
        .iter()
        .zip(&record.post_ports)
        .any(|((_, b), (_, p))| b != p);
    converged && departed
}

/// Burst-gated replies: an all-responsive constant-rate scan answered in at
/// least two bursts separated by a dropped block.
fn credit_signature(record: &ObservationRecord) -> bool {
    if record.batch.kind != ProbeKind::Scan || record.issued == 0 {
        return false;
    }
    let all_responsive = record
        .batch
        .targets
        .iter()
        .take(record.issued)
        .all(|t| t.expect_reply);
    if !all_responsive {
        return false;
    }
    let bitmap = record.bitmap();
    let bursts = success_bursts(&bitmap);
    bursts.len() >= 2 && bursts[0].0 == 0
}

/// Replies that arrive within a link latency of the rule install, for rules
/// that appeared well after the probe was sent.
fn working_set_signature(record: &ObservationRecord, params: &ClassifyParams) -> bool {
    for reply in &record.replies {
        if !reply.replied {
            continue;
        }
        let Some(reply_time) = reply.reply_time else {
            continue;
        };
        let sent = record.probe_sent[reply.probe_index];
        let header = record.probe_header(reply.probe_index);
        for (install_time, _, _) in rules_matching_flow(&record.delta.added, &header) {
            if *install_time >= sent + params.min_install_delay
                && reply_time >= *install_time
                && reply_time - *install_time <= params.reply_epsilon
            {
                return true;
            }
        }
    }
    false
}

/// No policy: only plain forwarding rules appeared and nothing anomalous
/// happened.
fn baseline_signature(record: &ObservationRecord) -> bool {
    !record.detected
        && record.delta.added.iter().all(|(_, _, r)| {
            !r.is_drop() && !r.has_rate_limit() && !r.has_set_field() && r.output_port().is_some()
        })
}

/// Classifies one record. The caller folds multiple records with
/// [`classify_all`].
pub fn classify_defense(record: &ObservationRecord, params: &ClassifyParams) -> Mechanism {
    if record.is_empty() {
        return Mechanism::Unknown;
    }
    if syn_proxy_signature(record) {
        return Mechanism::SynProxyWhitehole;
    }
    if detection_in_added(&record.delta.added, record.batch.src_ip).is_some() {
        // distinguish filtering from redirection by what the rule does
        if record
            .delta
            .added
            .iter()
            .any(|(_, _, r)| r.is_drop() && r.matcher.src.matches(record.batch.src_ip))
        {
            return Mechanism::TrafficFiltering;
        }
    }
    if rate_limit_signature(record) {
        return Mechanism::RateLimit;
    }
    if redirection_signature(record) {
        return Mechanism::Redirection;
    }
    if credit_signature(record) {
        return Mechanism::CreditBasedLimit;
    }
    if working_set_signature(record, params) {
        return Mechanism::WorkingSetDelay;
    }
    if baseline_signature(record) {
        return Mechanism::None;
    }
    Mechanism::Unknown
}

/// Folds per-record classifications: the most specific mechanism wins;
/// `None` only when every record agreed nothing is deployed.
pub fn classify_all(records: &[ObservationRecord], params: &ClassifyParams) -> Mechanism {
    let mut verdicts: Vec<Mechanism> = records
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| classify_defense(r, params))
        .collect();
    if verdicts.is_empty() {
        return Mechanism::Unknown;
    }
    for specific in [
        Mechanism::SynProxyWhitehole,
        Mechanism::TrafficFiltering,
        Mechanism::RateLimit,
        Mechanism::Redirection,
        Mechanism::CreditBasedLimit,
        Mechanism::WorkingSetDelay,
    ] {
        if verdicts.contains(&specific) {
            return specific;
        }
    }
    verdicts.dedup();
    if verdicts.iter().all(|m| *m == Mechanism::None) {
        Mechanism::None
    } else {
        Mechanism::Unknown
    }
}
