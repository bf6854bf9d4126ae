//! Scenario schema: the versioned JSON description of a run. Unknown keys
//! are rejected; validation collects every violation it can find.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{
    AggregationConfig, DosThresholdConfig, TrwCbConfig, WorkingSetConfig,
};
use crate::error::ScenarioError;
use crate::net::types::IpMatch;
use crate::net::SwitchId;
use crate::obfuscation::plan::ObfuscationSettings;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub duration_secs: f64,
    pub topology: TopologySpec,
    pub controller: ControllerSpec,
    #[serde(default)]
    pub attacker: Option<AttackerSpec>,
    #[serde(default)]
    pub obfuscation: Option<ObfuscationSettings>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub switches: Vec<SwitchSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub hosts: Vec<HostSpec>,
    #[serde(default)]
    pub host_ranges: Vec<HostRangeSpec>,
    #[serde(default)]
    pub subnets: Vec<StubSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    pub id: SwitchId,
    #[serde(default = "default_capacity")]
    pub table_capacity: usize,
    #[serde(default)]
    pub syn_proxy: bool,
}

fn default_capacity() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: EndpointSpec,
    pub b: EndpointSpec,
    pub latency_secs: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSpec {
    pub switch: SwitchId,
    pub port: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub name: String,
    pub ip: Ipv4Addr,
    pub switch: SwitchId,
    pub port: u32,
    pub latency_secs: f64,
    #[serde(default)]
    pub tenant: Option<u16>,
    #[serde(default)]
    pub responsive: bool,
}

/// Compact description of a run of hosts (h1..h100 style pools).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostRangeSpec {
    pub prefix: String,
    pub start_index: u32,
    pub count: u32,
    pub ip_base: Ipv4Addr,
    pub switch: SwitchId,
    pub port_base: u32,
    pub latency_secs: f64,
    #[serde(default)]
    pub tenant: Option<u16>,
    #[serde(default)]
    pub responsive: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubSpec {
    pub cidr: IpMatch,
    pub switch: SwitchId,
    pub port: u32,
    pub latency_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(default)]
    pub trwcb: Option<TrwCbConfig>,
    #[serde(default)]
    pub access: Option<AccessSpec>,
    #[serde(default)]
    pub aggregation: Option<AggregationConfig>,
    #[serde(default)]
    pub working_set: Option<WorkingSetConfig>,
    #[serde(default)]
    pub dos: Option<DosThresholdConfig>,
    #[serde(default)]
    pub tenant_routing: bool,
    #[serde(default = "default_stats_interval")]
    pub stats_interval_secs: f64,
    #[serde(default)]
    pub rule_idle_timeout_secs: Option<f64>,
    #[serde(default)]
    pub rule_hard_timeout_secs: Option<f64>,
}

fn default_stats_interval() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessSpec {
    pub subnets: Vec<IpMatch>,
    pub allow: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    /// Name of the attacker host.
    pub host: String,
    pub monitored_switches: Vec<SwitchId>,
    #[serde(default)]
    pub poll_interval_secs: f64,
    pub campaign: CampaignSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CampaignSpec {
    /// Constant-rate scan of the first `count` responsive hosts.
    CreditProbe {
        rate_per_sec: f64,
        count: usize,
        #[serde(default = "default_dst_port")]
        dst_port: u16,
        #[serde(default = "default_settle")]
        settle_secs: f64,
    },
    /// Batches spanning success ratios, each from a fresh spoofed source.
    BoundaryScan {
        batches: usize,
        probes_per_batch: usize,
        rate_per_sec: f64,
        spoof_base: Ipv4Addr,
        dark_base: Ipv4Addr,
        #[serde(default = "default_dst_port")]
        dst_port: u16,
        #[serde(default = "default_boundary_settle")]
        settle_secs: f64,
        #[serde(default = "default_gap")]
        inter_batch_gap_secs: f64,
    },
    /// Cell-by-cell reconstruction of the subnet access matrix under a
    /// stealth budget learned from earlier probing.
    AccessMatrix {
        subnets: Vec<IpMatch>,
        boundary: f64,
        margin: f64,
        rate_per_sec: f64,
        #[serde(default = "default_dst_port")]
        dst_port: u16,
        #[serde(default = "default_spoof_octet")]
        spoof_octet: u8,
        #[serde(default = "default_dark_octet")]
        dark_octet: u8,
    },
    /// Mechanism fingerprinting sweep with optional phases.
    Fingerprint {
        #[serde(default = "default_true")]
        syn_sweep: bool,
        dark_addr: Ipv4Addr,
        #[serde(default)]
        far_host: Option<Ipv4Addr>,
        #[serde(default)]
        redirect_dsts: Vec<Ipv4Addr>,
        #[serde(default = "default_flood_pps")]
        flood_pps: f64,
        #[serde(default = "default_flood_secs")]
        flood_secs: f64,
        /// Scan the first N responsive hosts for the credit fingerprint.
        #[serde(default)]
        scan_count: usize,
        #[serde(default = "default_scan_rate")]
        scan_rate_per_sec: f64,
        #[serde(default)]
        dark_scan: Option<DarkScanSpec>,
        #[serde(default = "default_dst_port")]
        dst_port: u16,
        #[serde(default = "default_probe_gap")]
        probe_gap_secs: f64,
    },
    /// Ramp one flow's rate until it is escalated to an exact rule.
    AggregationRamp {
        dst: Ipv4Addr,
        #[serde(default = "default_dst_port")]
        dst_port: u16,
        start_mbps: f64,
        step_mbps: f64,
        max_mbps: f64,
        #[serde(default = "default_step_secs")]
        step_secs: f64,
    },
    /// Probe a tenant host and read the installed rule's output port.
    CoResidency {
        target_ip: Ipv4Addr,
        target_tenant: u16,
        #[serde(default = "default_dst_port")]
        dst_port: u16,
    },
    /// Explicit ordered probe batches, one observation record each.
    Batches {
        batches: Vec<BatchSpec>,
        #[serde(default = "default_settle")]
        settle_secs: f64,
    },
    /// Access matrix reconstruction followed by a detection fingerprint;
    /// the full campaign the obfuscation scenarios defend against.
    ReconFull {
        subnets: Vec<IpMatch>,
        boundary: f64,
        margin: f64,
        rate_per_sec: f64,
        dark_scan: DarkScanSpec,
        #[serde(default = "default_dst_port")]
        dst_port: u16,
        #[serde(default = "default_spoof_octet")]
        spoof_octet: u8,
        #[serde(default = "default_dark_octet")]
        dark_octet: u8,
    },
}

/// One explicit probe batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    #[serde(default = "default_batch_kind")]
    pub kind: String,
    /// Source address, possibly spoofed.
    pub src_ip: Ipv4Addr,
    pub rate_per_sec: f64,
    pub targets: Vec<BatchTargetSpec>,
}

fn default_batch_kind() -> String {
    "scan".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchTargetSpec {
    pub dst: Ipv4Addr,
    #[serde(default = "default_dst_port")]
    pub dst_port: u16,
    /// Marks destinations drawn from the known-responsive pool.
    #[serde(default)]
    pub expect_reply: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarkScanSpec {
    pub spoof_src: Ipv4Addr,
    pub dark_base: Ipv4Addr,
    pub count: usize,
    pub rate_per_sec: f64,
}

/// Formula-vs-simulation sweep of the obfuscation success probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub ns: Vec<u32>,
    pub os: Vec<u32>,
    pub trials: u64,
    /// Include the k = n + 1 column that guarantees defeat.
    #[serde(default = "default_true")]
    pub include_k_beyond_n: bool,
}

fn default_dst_port() -> u16 {
    80
}
fn default_settle() -> f64 {
    3.0
}
fn default_boundary_settle() -> f64 {
    2.5
}
fn default_gap() -> f64 {
    1.0
}
fn default_spoof_octet() -> u8 {
    200
}
fn default_dark_octet() -> u8 {
    250
}
fn default_true() -> bool {
    true
}
fn default_flood_pps() -> f64 {
    150.0
}
fn default_flood_secs() -> f64 {
    2.0
}
fn default_scan_rate() -> f64 {
    100.0
}
fn default_probe_gap() -> f64 {
    1.5
}
fn default_step_secs() -> f64 {
    1.0
}

impl Scenario {
    pub fn from_json(path_label: &str, json: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario =
            serde_json::from_str(json).map_err(|e| ScenarioError::Parse {
                path: path_label.to_string(),
                message: e.to_string(),
            })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    /// Every host the topology declares, ranges expanded, in declaration
    /// order.
    pub fn expanded_hosts(&self) -> Vec<HostSpec> {
        let mut hosts = self.topology.hosts.clone();
        for range in &self.topology.host_ranges {
            for i in 0..range.count {
                hosts.push(HostSpec {
                    name: format!("{}{}", range.prefix, range.start_index + i),
                    ip: Ipv4Addr::from(u32::from(range.ip_base) + i),
                    switch: range.switch,
                    port: range.port_base + i,
                    latency_secs: range.latency_secs,
                    tenant: range.tenant,
                    responsive: range.responsive,
                });
            }
        }
        hosts
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut violations = Vec::new();
        if self.version != 1 {
            violations.push(format!("unsupported scenario version {}", self.version));
        }
        if self.duration_secs <= 0.0 {
            violations.push("duration_secs must be positive".into());
        }
        if self.topology.switches.is_empty() {
            violations.push("topology needs at least one switch".into());
        }

        let switch_ids: BTreeSet<SwitchId> =
            self.topology.switches.iter().map(|s| s.id).collect();
        if switch_ids.len() != self.topology.switches.len() {
            violations.push("duplicate switch ids".into());
        }

        let hosts = self.expanded_hosts();
        let mut names = BTreeSet::new();
        let mut ips = BTreeSet::new();
        for host in &hosts {
            if !names.insert(host.name.clone()) {
                violations.push(format!("duplicate host name {}", host.name));
            }
            if !ips.insert(host.ip) {
                violations.push(format!("duplicate host ip {}", host.ip));
            }
            if !switch_ids.contains(&host.switch) {
                violations.push(format!("host {} references unknown switch {}", host.name, host.switch));
            }
            if host.latency_secs <= 0.0 {
                violations.push(format!("host {} needs a positive latency", host.name));
            }
        }
        for link in &self.topology.links {
            for end in [link.a, link.b] {
                if !switch_ids.contains(&end.switch) {
                    violations.push(format!("link references unknown switch {}", end.switch));
                }
            }
            if link.latency_secs <= 0.0 {
                violations.push("links need positive latencies".into());
            }
        }
        for stub in &self.topology.subnets {
            if !switch_ids.contains(&stub.switch) {
                violations.push(format!(
                    "subnet {} references unknown switch {}",
                    stub.cidr, stub.switch
                ));
            }
        }

        // port usage: a (switch, port) may carry one link or one stub, or
        // any number of co-resident hosts
        let mut port_use: BTreeSet<(SwitchId, u32)> = BTreeSet::new();
        for link in &self.topology.links {
            for end in [link.a, link.b] {
                if !port_use.insert((end.switch, end.port)) {
                    violations.push(format!(
                        "port {} on switch {} used twice",
                        end.port, end.switch
                    ));
                }
            }
        }
        for stub in &self.topology.subnets {
            if !port_use.insert((stub.switch, stub.port)) {
                violations.push(format!(
                    "port {} on switch {} used twice",
                    stub.port, stub.switch
                ));
            }
        }
        for host in &hosts {
            if port_use.contains(&(host.switch, host.port)) {
                violations.push(format!(
                    "host {} shares port {} on switch {} with a link or subnet",
                    host.name, host.port, host.switch
                ));
            }
        }

        // switch graph connectivity (hosts hang off switches)
        if switch_ids.len() > 1 {
            let mut seen = BTreeSet::new();
            let first = *switch_ids.iter().next().expect("non-empty");
            let mut stack = vec![first];
            while let Some(sw) = stack.pop() {
                if !seen.insert(sw) {
                    continue;
                }
                for link in &self.topology.links {
                    if link.a.switch == sw {
                        stack.push(link.b.switch);
                    }
                    if link.b.switch == sw {
                        stack.push(link.a.switch);
                    }
                }
            }
            if seen.len() != switch_ids.len() {
                violations.push("switch graph is not connected".into());
            }
        }

        if let Some(trw) = &self.controller.trwcb {
            if let Err(e) = trw.validate() {
                violations.push(e);
            }
        }
        if let Some(access) = &self.controller.access {
            let matrix = crate::control::AccessMatrix::square(
                access.subnets.clone(),
                access.allow.clone(),
            );
            if let Err(e) = matrix.validate() {
                violations.push(e);
            }
        }
        if let Some(agg) = &self.controller.aggregation {
            if let Err(e) = agg.validate() {
                violations.push(e);
            }
        }
        if let Some(ws) = &self.controller.working_set {
            if let Err(e) = ws.validate() {
                violations.push(e);
            }
        }
        if let Some(dos) = &self.controller.dos {
            if let Err(e) = dos.validate() {
                violations.push(e);
            }
        }

        if let Some(attacker) = &self.attacker {
            if !hosts.iter().any(|h| h.name == attacker.host) {
                violations.push(format!("attacker host {} does not exist", attacker.host));
            }
            if attacker.monitored_switches.is_empty() {
                violations.push("attacker needs at least one monitored switch".into());
            }
            for sw in &attacker.monitored_switches {
                if !switch_ids.contains(sw) {
                    violations.push(format!("monitored switch {sw} does not exist"));
                }
            }
            // the single-switch side-channel is the base threat model; only
            // obfuscation scenarios model an attacker holding several
            if attacker.monitored_switches.len() > 1 && self.obfuscation.is_none() {
                violations.push(
                    "multiple monitored switches require an obfuscation section".into(),
                );
            }
            if attacker.poll_interval_secs < 0.0 {
                violations.push("poll_interval_secs must be >= 0".into());
            }
            if let Err(e) = validate_campaign(&attacker.campaign, &hosts) {
                violations.push(e);
            }
        }

        if let Some(obf) = &self.obfuscation {
            if let Err(e) = obf.validate() {
                violations.push(e);
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.trials == 0 {
                violations.push("sweep trials must be >= 1".into());
            }
            if sweep.ns.is_empty() || sweep.os.is_empty() {
                violations.push("sweep needs non-empty n and o lists".into());
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation { violations })
        }
    }
}

fn validate_campaign(campaign: &CampaignSpec, hosts: &[HostSpec]) -> Result<(), String> {
    let responsive = hosts.iter().filter(|h| h.responsive).count();
    match campaign {
        CampaignSpec::CreditProbe { rate_per_sec, count, .. } => {
            if *rate_per_sec <= 0.0 {
                return Err("credit_probe rate must be positive".into());
            }
            if *count > responsive {
                return Err(format!(
                    "credit_probe wants {count} targets but only {responsive} responsive hosts exist"
                ));
            }
        }
        CampaignSpec::BoundaryScan {
            batches,
            probes_per_batch,
            rate_per_sec,
            ..
        } => {
            if *rate_per_sec <= 0.0 {
                return Err("boundary_scan rate must be positive".into());
            }
            if *batches < 2 {
                return Err("boundary_scan needs at least two batches".into());
            }
            if *probes_per_batch > responsive {
                return Err(format!(
                    "boundary_scan wants {probes_per_batch} responsive targets but only {responsive} exist"
                ));
            }
        }
        CampaignSpec::AccessMatrix { subnets, rate_per_sec, margin, .. }
        | CampaignSpec::ReconFull { subnets, rate_per_sec, margin, .. } => {
            if subnets.is_empty() {
                return Err("access matrix campaign needs subnets".into());
            }
            if *rate_per_sec <= 0.0 {
                return Err("access matrix rate must be positive".into());
            }
            if *margin < 0.0 {
                return Err("stealth margin must be >= 0".into());
            }
        }
        CampaignSpec::Fingerprint { scan_count, .. } => {
            if *scan_count > responsive {
                return Err(format!(
                    "fingerprint scan wants {scan_count} targets but only {responsive} responsive hosts exist"
                ));
            }
        }
        CampaignSpec::AggregationRamp {
            start_mbps,
            step_mbps,
            max_mbps,
            ..
        } => {
            if *start_mbps <= 0.0 || *step_mbps <= 0.0 || max_mbps < start_mbps {
                return Err("aggregation ramp needs 0 < start <= max and a positive step".into());
            }
        }
        CampaignSpec::CoResidency { .. } => {}
        CampaignSpec::Batches { batches, .. } => {
            if batches.is_empty() {
                return Err("batches campaign needs at least one batch".into());
            }
            for (i, batch) in batches.iter().enumerate() {
                if batch.rate_per_sec <= 0.0 {
                    return Err(format!("batch {i} rate must be positive"));
                }
                let known = ["scan", "dos", "access_probe", "flow_ramp", "syn_probe", "redirect_probe", "co_res_probe"];
                if !known.contains(&batch.kind.as_str()) {
                    return Err(format!("batch {i} has unknown kind {:?}", batch.kind));
                }
            }
        }
    }
    Ok(())
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let json = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&path.display().to_string(), &json)
}
