//! Building simulations from scenarios and running experiments.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::spec::{CampaignSpec, Scenario};
use crate::control::access::AccessMatrix;
use crate::control::controller::{Controller, ControllerConfig, PolicySet};
use crate::net::event::{SimTime, TraceKind};
use crate::net::sim::{Injection, Simulation};
use crate::net::switch::Switch;
use crate::net::topology::{Host, Link, StubSubnet, Topology};
use crate::recon::campaign::{
    AccessMatrixConfig, AccessMatrixEngine, AggregationRampConfig, AggregationRampEngine,
    AttackerEnv, BoundaryScanConfig, BoundaryScanEngine, CampaignOutput, CoResidencyConfig,
    CoResidencyEngine, CreditProbeConfig, CreditProbeEngine, DarkScanConfig, Engine, EngineDriver,
    FingerprintConfig, FingerprintEngine, RawBatchesConfig, RawBatchesEngine, SequenceEngine,
    SharedOutput,
};
use crate::recon::classify::ClassifyParams;
use crate::recon::report::{
    AggregationReport, BoundaryReport, CreditReport, InferenceReport, MatrixReport, Mechanism,
};
use crate::error::ScenarioError;
use crate::obfuscation::probability::{sweep, sweep_csv, SweepCell};

/// Overrides applied on top of the scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub trials: Option<u64>,
}

/// Aggregate counters for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub duration_secs: f64,
    pub trace_records: usize,
    pub packet_ins: usize,
    pub rule_installs: usize,
    pub rule_removals: usize,
    pub forwards: usize,
    pub deliveries: usize,
    pub drops: usize,
    pub silent_drops: usize,
    pub syn_acks: usize,
    pub detections: usize,
    pub controller_messages: u64,
    pub probes_injected: usize,
    pub mechanism: Mechanism,
    pub stealth_violated: bool,
    pub notes: Vec<String>,
}

/// Everything a run produced, ready to be written to an output directory.
#[derive(Debug)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    pub seed: u64,
    pub trace_csv: String,
    pub report: InferenceReport,
    pub output: CampaignOutput,
    pub summary: Summary,
    pub sweep_cells: Vec<SweepCell>,
    pub injections: Vec<Injection>,
}

/// Builds the simulation and, when an attacker is configured, the campaign
/// engine plus its shared output cell.
pub fn build_simulation(
    scenario: &Scenario,
    seed: u64,
) -> Result<(Simulation, Option<SharedOutput>), ScenarioError> {
    let hosts: Vec<Host> = scenario
        .expanded_hosts()
        .into_iter()
        .map(|h| Host {
            name: h.name,
            ip: h.ip,
            switch: h.switch,
            port: h.port,
            latency: SimTime::from_secs_f64(h.latency_secs),
            tenant: h.tenant,
            responsive: h.responsive,
        })
        .collect();
    let links: Vec<Link> = scenario
        .topology
        .links
        .iter()
        .map(|l| Link {
            a: (l.a.switch, l.a.port),
            b: (l.b.switch, l.b.port),
            latency: SimTime::from_secs_f64(l.latency_secs),
        })
        .collect();
    let stubs: Vec<StubSubnet> = scenario
        .topology
        .subnets
        .iter()
        .map(|s| StubSubnet {
            cidr: s.cidr,
            switch: s.switch,
            port: s.port,
            latency: SimTime::from_secs_f64(s.latency_secs),
        })
        .collect();
    let topology = Topology::new(
        scenario.topology.switches.iter().map(|s| s.id),
        hosts,
        links,
        stubs,
    );

    let mut switches = BTreeMap::new();
    for spec in &scenario.topology.switches {
        switches.insert(
            spec.id,
            Switch::new(spec.id, spec.table_capacity, spec.syn_proxy),
        );
    }

    let policies = PolicySet {
        trwcb: scenario.controller.trwcb.clone(),
        access: scenario.controller.access.as_ref().map(|a| {
            AccessMatrix::square(a.subnets.clone(), a.allow.clone())
        }),
        aggregation: scenario.controller.aggregation.clone(),
        working_set: scenario.controller.working_set.clone(),
        dos: scenario.controller.dos.clone(),
        tenant_routing: scenario.controller.tenant_routing,
    };
    let controller = Controller::new(ControllerConfig {
        policies,
        stats_interval: SimTime::from_secs_f64(scenario.controller.stats_interval_secs),
        rule_idle_timeout: scenario
            .controller
            .rule_idle_timeout_secs
            .map(SimTime::from_secs_f64),
        rule_hard_timeout: scenario
            .controller
            .rule_hard_timeout_secs
            .map(SimTime::from_secs_f64),
        obfuscation: scenario.obfuscation.clone(),
        seed,
    });

    let (monitored, attacker_host) = match &scenario.attacker {
        Some(spec) => {
            let host = topology
                .host_by_name(&spec.host)
                .expect("validated attacker host");
            (
                spec.monitored_switches.iter().copied().collect(),
                Some(host),
            )
        }
        None => (BTreeSet::new(), None),
    };

    let mut sim = Simulation::new(topology, switches, controller, monitored, attacker_host);

    let output = match &scenario.attacker {
        Some(spec) => {
            let host_id = sim.attacker_host.expect("attacker host set");
            let host = sim.topology.host(host_id).clone();
            let env = AttackerEnv {
                host: host_id,
                ip: host.ip,
                switch: host.switch,
                port: host.port,
                poll_interval: SimTime::from_secs_f64(spec.poll_interval_secs),
            };
            let engine = build_engine(scenario, &spec.campaign, env, &sim);
            let out: SharedOutput = Rc::new(RefCell::new(CampaignOutput::default()));
            let driver = EngineDriver::new(engine, Rc::clone(&out));
            sim.set_driver(Box::new(driver));
            EngineDriver::start(&mut sim, SimTime::from_secs_f64(0.05));
            Some(out)
        }
        None => None,
    };

    Ok((sim, output))
}

/// First `count` responsive hosts in declaration order.
fn responsive_pool(sim: &Simulation, count: usize) -> Vec<std::net::Ipv4Addr> {
    sim.topology
        .hosts
        .iter()
        .filter(|h| h.responsive)
        .take(count)
        .map(|h| h.ip)
        .collect()
}

fn build_engine(
    scenario: &Scenario,
    campaign: &CampaignSpec,
    env: AttackerEnv,
    sim: &Simulation,
) -> Box<dyn Engine> {
    let _ = scenario;
    match campaign {
        CampaignSpec::CreditProbe {
            rate_per_sec,
            count,
            dst_port,
            settle_secs,
        } => Box::new(CreditProbeEngine::new(CreditProbeConfig {
            env,
            rate_per_sec: *rate_per_sec,
            targets: responsive_pool(sim, *count),
            dst_port: *dst_port,
            port_base: 10_000,
            settle: SimTime::from_secs_f64(*settle_secs),
        })),
        CampaignSpec::BoundaryScan {
            batches,
            probes_per_batch,
            rate_per_sec,
            spoof_base,
            dark_base,
            dst_port,
            settle_secs,
            inter_batch_gap_secs,
        } => Box::new(BoundaryScanEngine::new(BoundaryScanConfig {
            env,
            batches: *batches,
            probes_per_batch: *probes_per_batch,
            rate_per_sec: *rate_per_sec,
            spoof_base: *spoof_base,
            dark_base: *dark_base,
            dst_port: *dst_port,
            port_base: 10_000,
            settle: SimTime::from_secs_f64(*settle_secs),
            inter_batch_gap: SimTime::from_secs_f64(*inter_batch_gap_secs),
        })),
        CampaignSpec::AccessMatrix {
            subnets,
            boundary,
            margin,
            rate_per_sec,
            dst_port,
            spoof_octet,
            dark_octet,
        } => Box::new(AccessMatrixEngine::new(AccessMatrixConfig {
            env,
            subnets: subnets.clone(),
            boundary: *boundary,
            margin: *margin,
            rate_per_sec: *rate_per_sec,
            dst_port: *dst_port,
            port_base: 10_000,
            spoof_octet: *spoof_octet,
            dark_octet: *dark_octet,
            settle: SimTime::from_secs_f64(2.0),
        })),
        CampaignSpec::Fingerprint {
            syn_sweep,
            dark_addr,
            far_host,
            redirect_dsts,
            flood_pps,
            flood_secs,
            scan_count,
            scan_rate_per_sec,
            dark_scan,
            dst_port,
            probe_gap_secs,
        } => Box::new(FingerprintEngine::new(FingerprintConfig {
            env,
            syn_sweep: *syn_sweep,
            dark_addr: *dark_addr,
            far_host: *far_host,
            redirect_dsts: redirect_dsts.clone(),
            flood_pps: *flood_pps,
            flood_secs: *flood_secs,
            scan_targets: responsive_pool(sim, *scan_count),
            scan_rate_per_sec: *scan_rate_per_sec,
            dark_scan: dark_scan.as_ref().map(|d| DarkScanConfig {
                spoof_src: d.spoof_src,
                dark_base: d.dark_base,
                count: d.count,
                rate_per_sec: d.rate_per_sec,
            }),
            dst_port: *dst_port,
            port_base: 10_000,
            probe_gap: SimTime::from_secs_f64(*probe_gap_secs),
            classify: ClassifyParams::default(),
        })),
        CampaignSpec::AggregationRamp {
            dst,
            dst_port,
            start_mbps,
            step_mbps,
            max_mbps,
            step_secs,
        } => Box::new(AggregationRampEngine::new(AggregationRampConfig {
            env,
            dst: *dst,
            dst_port: *dst_port,
            src_port: 9_999,
            start_tenths: (start_mbps * 10.0).round() as u32,
            step_tenths: (step_mbps * 10.0).round() as u32,
            max_tenths: (max_mbps * 10.0).round() as u32,
            step_secs: *step_secs,
            packet_bytes: 1250,
        })),
        CampaignSpec::CoResidency {
            target_ip,
            target_tenant,
            dst_port,
        } => Box::new(CoResidencyEngine::new(CoResidencyConfig {
            env,
            target_ip: *target_ip,
            target_tenant: *target_tenant,
            dst_port: *dst_port,
            src_port: 9_998,
        })),
        CampaignSpec::Batches {
            batches,
            settle_secs,
        } => {
            let batches = batches
                .iter()
                .map(|b| {
                    let targets: Vec<crate::recon::probe::ProbeTarget> = b
                        .targets
                        .iter()
                        .map(|t| crate::recon::probe::ProbeTarget {
                            dst: t.dst,
                            dst_port: t.dst_port,
                            expect_reply: t.expect_reply,
                        })
                        .collect();
                    let responsive = targets.iter().filter(|t| t.expect_reply).count();
                    let ratio = if targets.is_empty() {
                        0.0
                    } else {
                        responsive as f64 / targets.len() as f64
                    };
                    crate::recon::probe::ProbeBatch {
                        kind: parse_probe_kind(&b.kind),
                        src_ip: b.src_ip,
                        targets,
                        rate_per_sec: b.rate_per_sec,
                        target_success_ratio: ratio,
                        seed: 0,
                    }
                })
                .collect();
            Box::new(RawBatchesEngine::new(RawBatchesConfig {
                env,
                batches,
                port_base: 10_000,
                settle: SimTime::from_secs_f64(*settle_secs),
                classify: ClassifyParams::default(),
            }))
        }
        CampaignSpec::ReconFull {
            subnets,
            boundary,
            margin,
            rate_per_sec,
            dark_scan,
            dst_port,
            spoof_octet,
            dark_octet,
        } => {
            let access = AccessMatrixEngine::new(AccessMatrixConfig {
                env,
                subnets: subnets.clone(),
                boundary: *boundary,
                margin: *margin,
                rate_per_sec: *rate_per_sec,
                dst_port: *dst_port,
                port_base: 10_000,
                spoof_octet: *spoof_octet,
                dark_octet: *dark_octet,
                settle: SimTime::from_secs_f64(2.0),
            });
            let fingerprint = FingerprintEngine::new(FingerprintConfig {
                env,
                syn_sweep: false,
                dark_addr: dark_scan.dark_base,
                far_host: None,
                redirect_dsts: Vec::new(),
                flood_pps: 0.0,
                flood_secs: 0.0,
                scan_targets: Vec::new(),
                scan_rate_per_sec: 1.0,
                dark_scan: Some(DarkScanConfig {
                    spoof_src: dark_scan.spoof_src,
                    dark_base: dark_scan.dark_base,
                    count: dark_scan.count,
                    rate_per_sec: dark_scan.rate_per_sec,
                }),
                dst_port: *dst_port,
                port_base: 30_000,
                probe_gap: SimTime::from_secs_f64(1.5),
                classify: ClassifyParams::default(),
            });
            Box::new(SequenceEngine::new(vec![
                Box::new(access),
                Box::new(fingerprint),
            ]))
        }
    }
}

fn parse_probe_kind(kind: &str) -> crate::recon::probe::ProbeKind {
    use crate::recon::probe::ProbeKind;
    match kind {
        "dos" => ProbeKind::Dos,
        "access_probe" => ProbeKind::AccessProbe,
        "flow_ramp" => ProbeKind::FlowRamp,
        "syn_probe" => ProbeKind::SynProbe,
        "redirect_probe" => ProbeKind::RedirectProbe,
        "co_res_probe" => ProbeKind::CoResProbe,
        _ => ProbeKind::Scan,
    }
}

fn build_report(output: &CampaignOutput) -> InferenceReport {
    let mut notes = output.notes.clone();
    if output.stealth_violated {
        notes.push("stealth violated: campaign aborted on detection".into());
    }
    InferenceReport {
        mechanism: output.mechanism.unwrap_or(Mechanism::Unknown),
        detection_boundary: output.boundary.map(|b| BoundaryReport {
            estimate: b.estimate,
            ci_low: b.ci_low,
            ci_high: b.ci_high,
        }),
        credit_estimate: output
            .credit_estimate
            .map(|(base, reward)| CreditReport { base, reward }),
        access_matrix: output.matrix.as_ref().map(|m| MatrixReport {
            subnets: m.src_subnets.iter().map(|s| s.to_string()).collect(),
            allow: m.allow.clone(),
        }),
        aggregation_threshold: output.aggregation_threshold_bytes_per_sec.map(|b| {
            AggregationReport {
                kind: "rate".into(),
                bytes_per_sec: Some(b),
                mbits_per_sec: Some(b * 8.0 / 1e6),
                cumulative_bytes: output.aggregation_cumulative_bytes,
            }
        }),
        co_resident: output.co_resident,
        notes,
    }
}

/// Runs a scenario to completion. Deterministic per seed: the same scenario
/// and seed produce byte-identical outputs.
pub fn run_experiment(
    scenario: &Scenario,
    options: RunOptions,
) -> Result<ExperimentResult, ScenarioError> {
    let seed = options.seed.unwrap_or(scenario.seed);

    let sweep_cells = match &scenario.sweep {
        Some(spec) => {
            let trials = options.trials.unwrap_or(spec.trials);
            let beyond = spec.include_k_beyond_n;
            sweep(
                &spec.ns,
                move |n| {
                    let top = if beyond { n + 1 } else { n };
                    (1..=top).collect()
                },
                &spec.os,
                trials,
                seed,
            )
        }
        None => Vec::new(),
    };

    let (mut sim, output_cell) = build_simulation(scenario, seed)?;
    sim.run_until(SimTime::from_secs_f64(scenario.duration_secs));

    let output = match output_cell {
        Some(cell) => {
            drop(sim.take_driver());
            Rc::try_unwrap(cell)
                .expect("driver dropped, cell unique")
                .into_inner()
        }
        None => CampaignOutput::default(),
    };

    let trace_csv = sim.trace.to_csv();
    let report = build_report(&output);
    let summary = Summary {
        scenario: scenario.name.clone(),
        seed,
        duration_secs: scenario.duration_secs,
        trace_records: sim.trace.records.len(),
        packet_ins: sim.trace.count(TraceKind::PacketIn),
        rule_installs: sim.trace.count(TraceKind::RuleInstall),
        rule_removals: sim.trace.count(TraceKind::RuleRemove),
        forwards: sim.trace.count(TraceKind::Forward),
        deliveries: sim.trace.count(TraceKind::Deliver),
        drops: sim.trace.count(TraceKind::Drop),
        silent_drops: sim.trace.count(TraceKind::SilentDrop),
        syn_acks: sim.trace.count(TraceKind::SynAck),
        detections: sim.trace.count(TraceKind::Detection),
        controller_messages: sim.controller.messages,
        probes_injected: sim.injections.len(),
        mechanism: report.mechanism,
        stealth_violated: output.stealth_violated,
        notes: output.notes.clone(),
    };

    Ok(ExperimentResult {
        scenario: scenario.clone(),
        seed,
        trace_csv,
        report,
        output,
        summary,
        sweep_cells,
        injections: sim.injections.clone(),
    })
}

/// Feeds a recorded injection log back in, issuing each injection at the
/// instant the attacker originally scheduled it so the event order is
/// reproduced exactly.
struct ReplayInjector {
    injections: Vec<Injection>,
    cursor: usize,
}

impl crate::net::sim::AttackerDriver for ReplayInjector {
    fn wake(&mut self, sim: &mut crate::net::sim::Simulation, _step: u64) {
        let now = sim.now();
        while self
            .injections
            .get(self.cursor)
            .is_some_and(|i| i.scheduled_at == now)
        {
            let injection = self.injections[self.cursor].clone();
            self.cursor += 1;
            sim.inject(
                injection.time,
                injection.switch,
                injection.port,
                injection.packet,
            );
        }
        if let Some(next) = self.injections.get(self.cursor) {
            sim.schedule_wake(next.scheduled_at, self.cursor as u64);
        }
    }
}

/// Re-runs a recorded injection log with no attacker logic and the
/// side-channel detached, returning the trace. Used to check side-channel
/// passivity: the trace must match the original run's byte for byte.
pub fn replay_experiment(
    scenario: &Scenario,
    injections: &[Injection],
    options: RunOptions,
) -> Result<String, ScenarioError> {
    let seed = options.seed.unwrap_or(scenario.seed);
    let mut stripped = scenario.clone();
    stripped.attacker = None;
    let (mut sim, _) = build_simulation(&stripped, seed)?;
    sim.detach_side_channel();
    if let Some(first) = injections.first() {
        let start = first.scheduled_at;
        sim.set_driver(Box::new(ReplayInjector {
            injections: injections.to_vec(),
            cursor: 0,
        }));
        sim.schedule_wake(start, 0);
    }
    sim.run_until(SimTime::from_secs_f64(scenario.duration_secs));
    Ok(sim.trace.to_csv())
}

impl ExperimentResult {
    /// Renders all output files: name to content, deterministic order.
    pub fn output_files(&self) -> Result<BTreeMap<String, String>, ScenarioError> {
        let mut files = BTreeMap::new();
        files.insert("trace.csv".to_string(), self.trace_csv.clone());
        files.insert("report.json".to_string(), self.report.to_json());
        let mut summary = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        summary.push('\n');
        files.insert("summary.json".to_string(), summary);
        if !self.output.records.is_empty() {
            files.insert(
                "observations.csv".to_string(),
                super::figures::observations_csv(&self.output.records),
            );
        }
        for (name, content) in super::figures::emit_figures(self)? {
            files.insert(name, content);
        }
        if !self.sweep_cells.is_empty() {
            files.insert("sweep.csv".to_string(), sweep_csv(&self.sweep_cells));
        }
        Ok(files)
    }

    /// Writes output files atomically (temp file + rename) into `dir`.
    pub fn write_outputs(&self, dir: &std::path::Path) -> Result<(), ScenarioError> {
        std::fs::create_dir_all(dir).map_err(|source| ScenarioError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for (name, content) in self.output_files()? {
            let tmp = dir.join(format!(".{name}.tmp"));
            let target = dir.join(&name);
            std::fs::write(&tmp, content).map_err(|source| ScenarioError::Io {
                path: tmp.display().to_string(),
                source,
            })?;
            std::fs::rename(&tmp, &target).map_err(|source| ScenarioError::Io {
                path: target.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }
}
