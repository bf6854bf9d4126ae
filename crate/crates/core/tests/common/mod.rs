//! Shared test fixtures: scenario loading and the independent sequential
//! test oracle the detector implementation is checked against.

#![allow(dead_code)]

use std::path::PathBuf;

use flowprobe::scenario::{load_scenario, run_experiment, ExperimentResult, RunOptions, Scenario};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

pub fn load(name: &str) -> Scenario {
    load_scenario(scenario_path(name)).unwrap_or_else(|e| panic!("loading {name}: {e}"))
}

pub fn run(name: &str) -> ExperimentResult {
    let scenario = load(name);
    run_experiment(&scenario, RunOptions::default())
        .unwrap_or_else(|e| panic!("running {name}: {e}"))
}

/// Independent sequential probability ratio walk, written directly from the
/// stopping-bound formulas. It never touches the detector implementation.
#[derive(Debug, Clone, Copy)]
pub struct SprtOracle {
    pub fail_step: f64,
    pub success_step: f64,
    pub upper: f64,
    pub lower: f64,
}

impl SprtOracle {
    pub fn new(theta0: f64, theta1: f64, alpha: f64, beta: f64) -> Self {
        SprtOracle {
            fail_step: ((1.0 - theta1) / (1.0 - theta0)).ln(),
            success_step: (theta1 / theta0).ln(),
            upper: ((1.0 - beta) / alpha).ln(),
            lower: (beta / (1.0 - alpha)).ln(),
        }
    }

    pub fn defaults() -> Self {
        SprtOracle::new(0.8, 0.2, 0.00005, 0.01)
    }

    /// Walks an outcome sequence (true = failure). Returns the 1-based index
    /// of the first upper crossing, or None. Lower crossings restart the
    /// walk at zero.
    pub fn first_detection(&self, outcomes: &[bool]) -> Option<usize> {
        let mut llr = 0.0f64;
        for (i, &failed) in outcomes.iter().enumerate() {
            llr += if failed { self.fail_step } else { self.success_step };
            if llr >= self.upper {
                return Some(i + 1);
            }
            if llr <= self.lower {
                llr = 0.0;
            }
        }
        None
    }
}

/// Even interleaving used by the scan batches: probe `j` of `n` is aimed at
/// a responsive host iff the responsive quota advances at `j`.
pub fn even_interleave(responsive_count: usize, n: usize) -> Vec<bool> {
    (0..n)
        .map(|j| ((j + 1) * responsive_count) / n > (j * responsive_count) / n)
        .collect()
}

/// Whether a batch with `failed_count` dark probes out of `n` is detected,
/// under sequential outcome resolution and credit gating. Probes sent with
/// zero credits are silently dropped and produce no outcome.
pub fn batch_detected(
    failed_count: usize,
    n: usize,
    base_credit: u32,
    reward: u32,
    oracle: &SprtOracle,
) -> bool {
    let pattern = even_interleave(n - failed_count, n);
    let mut credits = base_credit as i64;
    let mut llr = 0.0f64;
    for responsive in pattern {
        if credits < 1 {
            continue;
        }
        credits -= 1;
        if responsive {
            credits += reward as i64;
            llr += oracle.success_step;
        } else {
            llr += oracle.fail_step;
        }
        if llr >= oracle.upper {
            return true;
        }
        if llr <= oracle.lower {
            llr = 0.0;
        }
    }
    false
}

/// Boundary the oracle predicts for n-probe batches: the midpoint between
/// the largest undetected and smallest detected failed ratios.
pub fn oracle_boundary(n: usize, base_credit: u32, reward: u32, oracle: &SprtOracle) -> f64 {
    let mut max_undetected = None;
    let mut min_detected = None;
    for f in 0..=n {
        if batch_detected(f, n, base_credit, reward, oracle) {
            if min_detected.is_none() {
                min_detected = Some(f);
            }
        } else {
            max_undetected = Some(f);
        }
    }
    let lo = max_undetected.expect("some batch stays undetected") as f64 / n as f64;
    let hi = min_detected.expect("some batch is detected") as f64 / n as f64;
    (lo + hi) / 2.0
}
