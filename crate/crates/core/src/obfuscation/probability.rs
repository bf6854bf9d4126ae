//! Attacker success probability under flow obfuscation.
//!
//! An attacker holding side-channels on `n` switches always knows the first
//! switch of the chain. For each of the remaining `k-1` hops the true next
//! switch is one of `o` forward candidates, and the attacker covers `n/k` of
//! them, so the chance of observing the whole chain is `((n/k)/o)^(k-1)`.
//! `n/k` is evaluated as a real number, which generalizes the model to
//! budgets that do not divide evenly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObfuscationParams {
    /// Switches the attacker can monitor.
    pub n: u32,
    /// Chain length including the policy hop.
    pub k: u32,
    /// Average out-degree of a switch minus one.
    pub o: u32,
    /// Largest attacker success probability the operator accepts.
    #[serde(default = "default_p_accept")]
    pub p_accept: f64,
}

fn default_p_accept() -> f64 {
    1.0
}

impl ObfuscationParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.n < 1 || self.k < 1 || self.o < 1 {
            return Err("obfuscation params require n, k, o >= 1".into());
        }
        if !(self.p_accept > 0.0 && self.p_accept <= 1.0) {
            return Err("p_accept must be in (0, 1]".into());
        }
        Ok(())
    }
}

/// Closed-form success probability, clamped to [0, 1]. `k = 1` always
/// yields 1 because the attacker knows the ingress switch.
pub fn p_success(n: u32, k: u32, o: u32) -> f64 {
    debug_assert!(n >= 1 && k >= 1 && o >= 1);
    let per_hop = (n as f64 / k as f64) / o as f64;
    per_hop.clamp(0.0, 1.0).powi(k as i32 - 1)
}

/// Success probability of the full model: the closed form where the chain
/// can be covered, and exactly 0 once `k` exceeds the monitoring budget.
pub fn model_probability(n: u32, k: u32, o: u32) -> f64 {
    if attack_feasible(n, k) {
        p_success(n, k, o)
    } else {
        0.0
    }
}

/// True when the attacker can possibly observe the whole chain. With
/// `k > n` complete knowledge is impossible regardless of the formula value.
pub fn attack_feasible(n: u32, k: u32) -> bool {
    k <= n
}

/// Smallest `k >= 1` whose success probability is within `p_accept`;
/// `n + 1` when no smaller value suffices, since `k > n` always defeats the
/// attack.
pub fn choose_k(n: u32, o: u32, p_accept: f64) -> u32 {
    for k in 1..=n {
        if p_success(n, k, o) <= p_accept {
            return k;
        }
    }
    n + 1
}

/// Samples the monitoring model directly: at each hop beyond the first, the
/// true next switch is uniform among `o` candidates and the attacker
/// monitors `floor(n/k)` of them, plus one more with probability
/// `frac(n/k)`. Returns the fraction of trials where every hop was covered.
/// With `k > n` the result is exactly 0.
pub fn monte_carlo_success(n: u32, k: u32, o: u32, trials: u64, seed: u64) -> f64 {
    debug_assert!(trials >= 1);
    if k == 1 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = n as f64 / k as f64;
    let whole = budget.floor() as u32;
    let frac = budget - budget.floor();

    let mut hits = 0u64;
    for _ in 0..trials {
        let mut all_covered = true;
        for _ in 0..k - 1 {
            let monitors = (whole + if frac > 0.0 && rng.gen_bool(frac) { 1 } else { 0 }).min(o);
            // candidates are exchangeable: the true switch is covered iff its
            // uniform index falls among the monitored ones
            let true_switch = rng.gen_range(0..o);
            if true_switch >= monitors {
                all_covered = false;
                break;
            }
        }
        if all_covered {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

/// One row of the formula-vs-simulation sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub n: u32,
    pub k: u32,
    pub o: u32,
    pub p_formula: f64,
    pub p_monte_carlo: f64,
    pub trials: u64,
}

/// Evaluates the grid `n x k x o`, one Monte Carlo run per cell with a
/// per-cell seed derived from `seed`.
pub fn sweep(
    ns: &[u32],
    ks_for: impl Fn(u32) -> Vec<u32>,
    os: &[u32],
    trials: u64,
    seed: u64,
) -> Vec<SweepCell> {
    let mut out = Vec::new();
    for &n in ns {
        for k in ks_for(n) {
            for &o in os {
                let cell_seed = seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(((n as u64) << 32) ^ ((k as u64) << 16) ^ o as u64);
                out.push(SweepCell {
                    n,
                    k,
                    o,
                    p_formula: model_probability(n, k, o),
                    p_monte_carlo: monte_carlo_success(n, k, o, trials, cell_seed),
                    trials,
                });
            }
        }
    }
    out
}

/// Sweep rows rendered as CSV: `n,k,o,p_formula,p_monte_carlo,trials`.
pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("n,k,o,p_formula,p_monte_carlo,trials\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{}\n",
            c.n, c.k, c.o, c.p_formula, c.p_monte_carlo, c.trials
        ));
    }
    out
}
