//! Threshold-based DoS detection over per-source packet rates.

use serde::{Deserialize, Serialize};

use crate::net::PortId;

/// What the controller pushes once a source crosses the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DosResponse {
    /// A drop rule for all traffic from the source.
    Filter,
    /// A rule carrying a rate-limit action for the offending flow.
    RateLimit,
    /// A rule diverting the source's traffic to the honeypot port.
    Redirect,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DosThresholdConfig {
    /// Sliding window in seconds.
    #[serde(default = "default_window")]
    pub window_secs: f64,
    /// Packets/second threshold. Strictly above triggers the response.
    pub threshold_pps: f64,
    pub response: DosResponse,
    /// Port traffic is diverted to when the response is `Redirect`.
    #[serde(default)]
    pub honeypot_port: Option<PortId>,
    /// Bytes/second cap written into rules when the response is `RateLimit`.
    #[serde(default = "default_rate_cap")]
    pub rate_limit_bytes_per_sec: u64,
}

fn default_window() -> f64 {
    1.0
}

fn default_rate_cap() -> u64 {
    125_000
}

impl DosThresholdConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.threshold_pps <= 0.0 {
            return Err("dos threshold_pps must be positive".into());
        }
        if self.response == DosResponse::Redirect && self.honeypot_port.is_none() {
            return Err("dos redirect response needs a honeypot_port".into());
        }
        Ok(())
    }

    pub fn window_us(&self) -> u64 {
        (self.window_secs * 1e6).round() as u64
    }

    pub fn over_threshold(&self, pps: f64) -> bool {
        pps > self.threshold_pps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_is_strict() {
        let cfg = DosThresholdConfig {
            window_secs: 1.0,
            threshold_pps: 100.0,
            response: DosResponse::Filter,
            honeypot_port: None,
            rate_limit_bytes_per_sec: 125_000,
        };
        assert!(!cfg.over_threshold(99.0));
        assert!(!cfg.over_threshold(100.0));
        assert!(cfg.over_threshold(101.0));
    }

    #[test]
    fn redirect_requires_honeypot_port() {
        let cfg = DosThresholdConfig {
            window_secs: 1.0,
            threshold_pps: 100.0,
            response: DosResponse::Redirect,
            honeypot_port: None,
            rate_limit_bytes_per_sec: 125_000,
        };
        assert!(cfg.validate().is_err());
    }
}
