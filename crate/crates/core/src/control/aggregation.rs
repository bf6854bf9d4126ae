//! Wildcard flow aggregation with per-flow escalation thresholds.
//!
//! New flows are covered by wildcard rules at a configured prefix
//! granularity. Flows whose measured rate or cumulative size reaches a
//! threshold are escalated to exact-match rules with a higher priority.

use serde::{Deserialize, Serialize};

/// Aggregation policy parameters. At least one threshold must be set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationConfig {
    /// Escalate when the flow's windowed rate reaches this many bytes/sec.
    #[serde(default)]
    pub rate_threshold_bytes_per_sec: Option<u64>,
    /// Escalate when the flow's cumulative bytes reach this value.
    #[serde(default)]
    pub size_threshold_bytes: Option<u64>,
    /// Prefix length of wildcard rules (applied to the destination).
    pub wildcard_prefix: u8,
    /// Trailing window used to measure flow rates, in seconds.
    #[serde(default = "default_window")]
    pub rate_window_secs: f64,
}

fn default_window() -> f64 {
    0.5
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.rate_threshold_bytes_per_sec.is_none() && self.size_threshold_bytes.is_none() {
            return Err("aggregation policy needs a rate or size threshold".into());
        }
        if self.wildcard_prefix > 32 {
            return Err("aggregation wildcard prefix must be <= 32".into());
        }
        Ok(())
    }

    /// Threshold comparison is inclusive: a flow sitting exactly at the
    /// threshold is escalated.
    pub fn over_threshold(&self, rate_bytes_per_sec: f64, cumulative_bytes: u64) -> bool {
        if let Some(t) = self.rate_threshold_bytes_per_sec {
            if rate_bytes_per_sec >= t as f64 {
                return true;
            }
        }
        if let Some(t) = self.size_threshold_bytes {
            if cumulative_bytes >= t {
                return true;
            }
        }
        false
    }
}
