//! Estimators over observation records: credit parameters, the detection
//! boundary, aggregation thresholds, and the redirection check.

use crate::error::ReconError;
use crate::recon::probe::ObservationRecord;

/// Detection boundary estimate with the bracketing interval it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEstimate {
    /// Midpoint between the largest undetected and smallest detected
    /// failed-connection ratios.
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Success runs in a reply bitmap: (start, length).
pub fn success_bursts(bitmap: &[bool]) -> Vec<(usize, usize)> {
    let mut bursts = Vec::new();
    let mut start = None;
    for (i, ok) in bitmap.iter().enumerate() {
        match (ok, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                bursts.push((s, i - s));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        bursts.push((s, bitmap.len() - s));
    }
    bursts
}

/// Base credit and per-success reward recovered from burst-gated replies:
/// the first burst spends the base credits, the second spends the credits
/// the first burst's successes earned.
pub fn estimate_credit_params(records: &[ObservationRecord]) -> Result<(u32, u32), ReconError> {
    for record in records {
        let bitmap = record.bitmap();
        let bursts = success_bursts(&bitmap);
        if bursts.len() < 2 || bursts[0].0 != 0 {
            continue;
        }
        let base = bursts[0].1 as u32;
        let second = bursts[1].1 as u32;
        if base == 0 {
            continue;
        }
        let reward = (second as f64 / base as f64).round() as u32;
        return Ok((base, reward));
    }
    Err(ReconError::PatternNotFound)
}

/// Boundary between undetected and detected scans, from batches spanning
/// success ratios. Requires both outcomes to be present.
pub fn estimate_detection_boundary(
    records: &[ObservationRecord],
) -> Result<BoundaryEstimate, ReconError> {
    let mut max_undetected: Option<f64> = None;
    let mut min_detected: Option<f64> = None;
    for record in records.iter().filter(|r| r.issued > 0) {
        let ratio = record.failed_ratio();
        if record.detected {
            min_detected = Some(min_detected.map_or(ratio, |m: f64| m.min(ratio)));
        } else {
            max_undetected = Some(max_undetected.map_or(ratio, |m: f64| m.max(ratio)));
        }
    }
    match (max_undetected, min_detected) {
        (Some(lo), Some(hi)) => {
            let (ci_low, ci_high) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            Ok(BoundaryEstimate {
                estimate: (lo + hi) / 2.0,
                ci_low,
                ci_high,
            })
        }
        _ => Err(ReconError::InsufficientCoverage),
    }
}

/// Redirection check over a redirect-probe record: true when port-distinct
/// destinations converge on one output port under high-profile traffic.
pub fn detect_redirection(record: &ObservationRecord) -> Result<bool, ReconError> {
    let mut baselines: Vec<u32> = record.baseline_ports.iter().map(|(_, p)| *p).collect();
    baselines.sort_unstable();
    baselines.dedup();
    if baselines.len() < 2 {
        return Err(ReconError::NoPortDistinctPair);
    }
    if record.post_ports.len() < 2 {
        return Ok(false);
    }
    let first = record.post_ports[0].1;
    let converged = record.post_ports.iter().all(|(_, p)| *p == first);
    let departed = record
        .baseline_ports
        .iter()
        .zip(&record.post_ports)
        .any(|((_, b), (_, p))| b != p);
    Ok(converged && departed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::probe::{ProbeBatch, ProbeKind, ProbeTarget, ReplyEvent};
    use std::net::Ipv4Addr;

    fn record_with_bitmap(bitmap: &[bool]) -> ObservationRecord {
        let targets: Vec<ProbeTarget> = (0..bitmap.len())
            .map(|i| ProbeTarget {
                dst: Ipv4Addr::new(10, 0, 1, (i % 250 + 1) as u8),
                dst_port: 80,
                expect_reply: true,
            })
            .collect();
        let mut rec = ObservationRecord::new(ProbeBatch {
            kind: ProbeKind::Scan,
            src_ip: [10, 0, 0, 9].into(),
            targets,
            rate_per_sec: 100.0,
            target_success_ratio: 1.0,
            seed: 0,
        });
        rec.issued = bitmap.len();
        rec.replies = bitmap
            .iter()
            .enumerate()
            .map(|(i, &ok)| ReplyEvent {
                probe_index: i,
                replied: ok,
                reply_time: None,
            })
            .collect();
        rec
    }

    fn ratio_record(failed_ratio: f64, detected: bool) -> ObservationRecord {
        let n = 100;
        let dark = (failed_ratio * n as f64).round() as usize;
        let targets: Vec<ProbeTarget> = (0..n)
            .map(|i| ProbeTarget {
                dst: Ipv4Addr::new(10, 0, 2, (i % 250) as u8),
                dst_port: 80,
                expect_reply: i >= dark,
            })
            .collect();
        let mut rec = ObservationRecord::new(ProbeBatch {
            kind: ProbeKind::Scan,
            src_ip: [172, 16, 0, 1].into(),
            targets,
            rate_per_sec: 1.0,
            target_success_ratio: 1.0 - failed_ratio,
            seed: 0,
        });
        rec.issued = n;
        rec.detected = detected;
        rec
    }

    #[test]
    fn bursts_ten_then_twenty_give_base_ten_reward_two() {
        let mut bitmap = vec![true; 10];
        bitmap.extend(vec![false; 39]);
        bitmap.extend(vec![true; 20]);
        bitmap.extend(vec![false; 29]);
        let rec = record_with_bitmap(&bitmap);
        assert_eq!(estimate_credit_params(&[rec]).unwrap(), (10, 2));
    }

    #[test]
    fn bursts_five_then_fifteen_give_base_five_reward_three() {
        let mut bitmap = vec![true; 5];
        bitmap.extend(vec![false; 44]);
        bitmap.extend(vec![true; 15]);
        bitmap.extend(vec![false; 20]);
        let rec = record_with_bitmap(&bitmap);
        assert_eq!(estimate_credit_params(&[rec]).unwrap(), (5, 3));
    }

    #[test]
    fn monotone_success_has_no_pattern() {
        let rec = record_with_bitmap(&[true; 30]);
        assert_eq!(
            estimate_credit_params(&[rec]),
            Err(ReconError::PatternNotFound)
        );
    }

    #[test]
    fn boundary_is_the_midpoint_of_the_gap() {
        let records = vec![
            ratio_record(0.40, false),
            ratio_record(0.53, false),
            ratio_record(0.54, true),
            ratio_record(0.80, true),
        ];
        let est = estimate_detection_boundary(&records).unwrap();
        assert!((est.estimate - 0.535).abs() < 1e-9);
        assert!((est.ci_low - 0.53).abs() < 1e-9);
        assert!((est.ci_high - 0.54).abs() < 1e-9);
    }

    #[test]
    fn single_outcome_is_insufficient_coverage() {
        let records = vec![ratio_record(0.9, true), ratio_record(0.95, true)];
        assert_eq!(
            estimate_detection_boundary(&records),
            Err(ReconError::InsufficientCoverage)
        );
    }

    #[test]
    fn redirection_requires_a_port_distinct_pair() {
        let mut rec = record_with_bitmap(&[true, true]);
        rec.baseline_ports = vec![([10, 0, 1, 1].into(), 2), ([10, 0, 2, 1].into(), 2)];
        assert_eq!(
            detect_redirection(&rec),
            Err(ReconError::NoPortDistinctPair)
        );
    }
}
