//! Detector-versus-oracle equivalence and boundary-estimator consistency.

mod common;

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use common::{oracle_boundary, SprtOracle};
use flowprobe::control::trwcb::{Outcome, TrwCb, TrwCbConfig};
use flowprobe::net::event::SimTime;
use flowprobe::scenario::spec::CampaignSpec;
use flowprobe::scenario::{run_experiment, RunOptions};

const SRC: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 9);

/// Large credit pool so the walk is exercised without credit gating.
fn walk_config() -> TrwCbConfig {
    TrwCbConfig {
        base_credit: 1_000_000,
        ..TrwCbConfig::default()
    }
}

fn dst_for(step: usize) -> Ipv4Addr {
    Ipv4Addr::new(10, 9, (step >> 8) as u8, (step & 0xff) as u8)
}

/// Runs a full outcome sequence through the detector implementation,
/// returning the 1-based index of the first detection.
fn impl_first_detection(cfg: &TrwCbConfig, outcomes: &[bool]) -> Option<usize> {
    let mut det = TrwCb::new(cfg.clone());
    for (i, &failed) in outcomes.iter().enumerate() {
        let dst = dst_for(i);
        det.on_first_contact(SRC, dst, SimTime::ZERO);
        let outcome = if failed { Outcome::Failure } else { Outcome::Success };
        let res = det.on_outcome(SRC, dst, outcome).expect("pending resolves");
        if res.detected {
            return Some(i + 1);
        }
    }
    None
}

#[test]
fn frozen_crossings_match_the_oracle() {
    let oracle = SprtOracle::defaults();
    assert_eq!(oracle.first_detection(&[true; 20]), Some(8));
    let alt = SprtOracle::new(0.75, 0.25, 0.00005, 0.01);
    assert_eq!(alt.first_detection(&[true; 20]), Some(10));
    // the implementation agrees on both configurations
    assert_eq!(impl_first_detection(&walk_config(), &[true; 20]), Some(8));
    let alt_cfg = TrwCbConfig {
        theta0: 0.75,
        theta1: 0.25,
        ..walk_config()
    };
    assert_eq!(impl_first_detection(&alt_cfg, &[true; 20]), Some(10));
}

/// Plain brute force: every outcome sequence up to length 12, driven
/// through the real detector with pendings and credits in play.
#[test]
fn sprt_equivalence_brute_force_short_sequences() {
    let cfg = walk_config();
    let oracle = SprtOracle::defaults();
    for len in 1..=12usize {
        for bits in 0u32..(1 << len) {
            let outcomes: Vec<bool> = (0..len).map(|i| bits & (1 << i) != 0).collect();
            let by_impl = impl_first_detection(&cfg, &outcomes);
            let by_oracle = oracle.first_detection(&outcomes);
            assert_eq!(by_impl, by_oracle, "sequence {outcomes:?}");
        }
    }
}

/// Exhaustive equivalence for every sequence of length <= 20, by exploring
/// the joint (implementation, oracle) state space. Two prefixes reaching
/// the same walk value behave identically for every suffix, so collapsing
/// them covers the whole sequence tree.
#[test]
fn sprt_equivalence_all_sequences_up_to_twenty() {
    let cfg = walk_config();
    let oracle = SprtOracle::defaults();

    let mut visited: BTreeSet<(u8, u64, u64)> = BTreeSet::new();
    let mut stack: Vec<(TrwCb, f64, u8)> = vec![(TrwCb::new(cfg.clone()), 0.0, 0)];
    let mut states = 0usize;

    while let Some((det, oracle_llr, depth)) = stack.pop() {
        if depth == 20 {
            continue;
        }
        for &failed in &[false, true] {
            let mut next = det.clone();
            let dst = dst_for(depth as usize);
            next.on_first_contact(SRC, dst, SimTime::ZERO);
            let outcome = if failed { Outcome::Failure } else { Outcome::Success };
            let res = next.on_outcome(SRC, dst, outcome).expect("pending resolves");

            let mut next_llr = oracle_llr
                + if failed {
                    oracle.fail_step
                } else {
                    oracle.success_step
                };
            let oracle_detected = next_llr >= oracle.upper;
            if !oracle_detected && next_llr <= oracle.lower {
                next_llr = 0.0;
            }

            assert_eq!(
                res.detected, oracle_detected,
                "divergence at depth {depth}, failed={failed}"
            );
            if res.detected {
                continue; // blocked is absorbing; all suffixes agree
            }
            let impl_llr = next.hosts[&SRC].log_likelihood;
            assert!(
                (impl_llr - next_llr).abs() < 1e-9,
                "walk values diverged: {impl_llr} vs {next_llr}"
            );
            states += 1;
            if visited.insert((depth + 1, impl_llr.to_bits(), next_llr.to_bits())) {
                stack.push((next, next_llr, depth + 1));
            }
        }
    }
    assert!(states > 100, "state space explored ({states} transitions)");
}

/// The deterministic batch oracle pins the boundary for 100-probe batches.
#[test]
fn batch_oracle_boundary_is_frozen() {
    let oracle = SprtOracle::defaults();
    // failed counts 0..=53 stay undetected, 54 and up are detected
    assert!(!common::batch_detected(53, 100, 10, 2, &oracle));
    assert!(common::batch_detected(54, 100, 10, 2, &oracle));
    assert!(common::batch_detected(100, 100, 10, 2, &oracle));
    assert!(!common::batch_detected(0, 100, 10, 2, &oracle));
    let boundary = oracle_boundary(100, 10, 2, &oracle);
    assert!((boundary - 0.535).abs() < 1e-12, "boundary {boundary}");
}

/// Estimator consistency: with 500 batches the empirical estimate brackets
/// the oracle boundary inside its reported interval.
#[test]
fn boundary_estimator_converges_to_the_oracle() {
    let mut scenario = common::load("boundary_fig56");
    match &mut scenario.attacker.as_mut().expect("attacker").campaign {
        CampaignSpec::BoundaryScan { batches, .. } => *batches = 500,
        other => panic!("unexpected campaign {other:?}"),
    }
    scenario.duration_secs = 70_000.0;
    let result = run_experiment(&scenario, RunOptions::default()).expect("runs");
    let est = result.output.boundary.expect("estimated");
    let oracle = oracle_boundary(100, 10, 2, &SprtOracle::defaults());
    assert!(
        est.ci_low - 1e-9 <= oracle && oracle <= est.ci_high + 1e-9,
        "oracle {oracle} outside CI [{}, {}]",
        est.ci_low,
        est.ci_high
    );
    assert!(
        (est.estimate - oracle).abs() <= (est.ci_high - est.ci_low).max(0.01),
        "estimate {} drifted from oracle {oracle}",
        est.estimate
    );
}
