//! The attacker's findings, serialized with stable key ordering.

use serde::{Deserialize, Serialize};

/// Defense mechanism classification. `Unknown` is a legitimate outcome; the
/// classifier never guesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    TrafficFiltering,
    RateLimit,
    CreditBasedLimit,
    Redirection,
    SynProxyWhitehole,
    WorkingSetDelay,
    None,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    /// Estimated failed-connection ratio at which scans are detected.
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditReport {
    pub base: u32,
    pub reward: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub subnets: Vec<String>,
    pub allow: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationReport {
    /// "rate" or "size".
    pub kind: String,
    pub bytes_per_sec: Option<f64>,
    pub mbits_per_sec: Option<f64>,
    pub cumulative_bytes: Option<u64>,
}

/// What a full reconnaissance campaign learned. Fields are `null` when the
/// campaign did not target them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub mechanism: Mechanism,
    pub detection_boundary: Option<BoundaryReport>,
    pub credit_estimate: Option<CreditReport>,
    pub access_matrix: Option<MatrixReport>,
    pub aggregation_threshold: Option<AggregationReport>,
    pub co_resident: Option<bool>,
    /// Errors the inference surfaced instead of guessing around.
    pub notes: Vec<String>,
}

impl Default for InferenceReport {
    fn default() -> Self {
        InferenceReport {
            mechanism: Mechanism::Unknown,
            detection_boundary: None,
            credit_estimate: None,
            access_matrix: None,
            aggregation_threshold: None,
            co_resident: None,
            notes: Vec::new(),
        }
    }
}

impl InferenceReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
