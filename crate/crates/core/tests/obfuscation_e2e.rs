//! Obfuscation chain behavior on a live simulation: policy equivalence
//! across k, header restoration, ledger bookkeeping, and atomic rollback.

mod common;

use flowprobe::net::event::{SimTime, TraceKind};
use flowprobe::net::types::{Packet, PacketKind};
use flowprobe::net::Simulation;
use flowprobe::scenario::spec::{
    AccessSpec, ControllerSpec, EndpointSpec, HostSpec, LinkSpec, Scenario, StubSpec, SwitchSpec,
    TopologySpec,
};
use flowprobe::scenario::build_simulation;
use flowprobe::obfuscation::plan::ObfuscationSettings;

/// Line of three switches. Sender a sits on s1, a responsive server and a
/// dark subnet hang off s3. Access control allows 10.0.0.0/24 into
/// 10.0.1.0/24 but not into 10.0.7.0/24.
fn line_scenario(k: u32) -> Scenario {
    Scenario {
        version: 1,
        name: format!("line_k{k}"),
        description: String::new(),
        seed: 42,
        duration_secs: 30.0,
        topology: TopologySpec {
            switches: vec![
                SwitchSpec { id: 1, table_capacity: 1000, syn_proxy: false },
                SwitchSpec { id: 2, table_capacity: 1000, syn_proxy: false },
                SwitchSpec { id: 3, table_capacity: 1000, syn_proxy: false },
            ],
            links: vec![
                LinkSpec {
                    a: EndpointSpec { switch: 1, port: 100 },
                    b: EndpointSpec { switch: 2, port: 100 },
                    latency_secs: 0.002,
                },
                LinkSpec {
                    a: EndpointSpec { switch: 2, port: 101 },
                    b: EndpointSpec { switch: 3, port: 101 },
                    latency_secs: 0.002,
                },
            ],
            hosts: vec![
                HostSpec {
                    name: "a".into(),
                    ip: [10, 0, 0, 1].into(),
                    switch: 1,
                    port: 1,
                    latency_secs: 0.001,
                    tenant: None,
                    responsive: false,
                },
                HostSpec {
                    name: "b".into(),
                    ip: [10, 0, 1, 1].into(),
                    switch: 3,
                    port: 1,
                    latency_secs: 0.001,
                    tenant: None,
                    responsive: true,
                },
            ],
            host_ranges: Vec::new(),
            subnets: vec![
                StubSpec {
                    cidr: "10.0.0.0/24".parse().unwrap(),
                    switch: 1,
                    port: 200,
                    latency_secs: 0.001,
                },
                StubSpec {
                    cidr: "10.0.7.0/24".parse().unwrap(),
                    switch: 3,
                    port: 201,
                    latency_secs: 0.001,
                },
            ],
        },
        controller: ControllerSpec {
            trwcb: None,
            access: Some(AccessSpec {
                subnets: vec![
                    "10.0.0.0/24".parse().unwrap(),
                    "10.0.1.0/24".parse().unwrap(),
                    "10.0.7.0/24".parse().unwrap(),
                ],
                allow: vec![
                    vec![true, true, false],
                    vec![true, true, false],
                    vec![false, false, true],
                ],
            }),
            aggregation: None,
            working_set: None,
            dos: None,
            tenant_routing: false,
            stats_interval_secs: 0.1,
            rule_idle_timeout_secs: None,
            rule_hard_timeout_secs: None,
        },
        attacker: None,
        obfuscation: Some(ObfuscationSettings {
            k,
            rewrite_pool_cidr: "198.18.0.0/16".parse().unwrap(),
        }),
        sweep: None,
    }
}

fn syn(src: [u8; 4], dst: [u8; 4], flow: u64) -> Packet {
    Packet::new(
        PacketKind::TcpSyn,
        src.into(),
        dst.into(),
        4000 + flow as u16,
        80,
        60,
        flow,
        SimTime::ZERO,
    )
}

/// Injects an allowed flow and a denied flow from host a.
fn run_two_flows(k: u32) -> Simulation {
    let scenario = line_scenario(k);
    let (mut sim, _) = build_simulation(&scenario, scenario.seed).unwrap();
    sim.inject(SimTime::from_micros(1_000), 1, 1, syn([10, 0, 0, 1], [10, 0, 1, 1], 1));
    sim.inject(SimTime::from_micros(500_000), 1, 1, syn([10, 0, 0, 1], [10, 0, 7, 9], 2));
    sim.run_until(SimTime::from_secs_f64(10.0));
    sim
}

fn deliveries(sim: &Simulation) -> Vec<&str> {
    sim.trace
        .records
        .iter()
        .filter(|r| r.kind == TraceKind::Deliver)
        .map(|r| r.detail.as_str())
        .collect()
}

#[test]
fn terminal_dispositions_match_the_unobfuscated_run() {
    let baseline = run_two_flows(1);
    let obfuscated = run_two_flows(3);

    // the allowed flow is delivered in both, with the original header
    let base_deliveries = deliveries(&baseline);
    let obf_deliveries = deliveries(&obfuscated);
    assert!(base_deliveries
        .iter()
        .any(|d| d.contains("10.0.0.1>10.0.1.1")));
    assert!(
        obf_deliveries
            .iter()
            .any(|d| d.contains("10.0.0.1>10.0.1.1")),
        "egress header restored to the original addresses: {obf_deliveries:?}"
    );
    // the denied flow is never delivered in either run
    assert!(base_deliveries.iter().all(|d| !d.contains("10.0.7.9")));
    assert!(obf_deliveries.iter().all(|d| !d.contains("10.0.7.9")));
}

#[test]
fn denied_flows_drop_at_the_policy_hop_not_the_ingress() {
    let sim = run_two_flows(3);
    // no silent drop at the ingress switch for the denied flow; a drop
    // record appears on switch 3 instead
    let ingress_silent = sim
        .trace
        .records
        .iter()
        .any(|r| r.kind == TraceKind::SilentDrop && r.switch == 1);
    assert!(!ingress_silent, "ingress must reveal nothing");
    let dropped_at_policy_hop = sim
        .trace
        .records
        .iter()
        .any(|r| r.kind == TraceKind::Drop && r.switch == 3);
    assert!(dropped_at_policy_hop, "denied flow dies at the k-th hop");

    // the unobfuscated controller drops it silently at the ingress
    let baseline = run_two_flows(1);
    assert!(baseline
        .trace
        .records
        .iter()
        .any(|r| r.kind == TraceKind::SilentDrop && r.switch == 1));
}

#[test]
fn every_chain_switch_carries_rewrites_then_one_forward() {
    let sim = run_two_flows(3);
    for switch in [1u32, 2] {
        let rules = sim.snapshot(switch).unwrap();
        let rewriting: Vec<_> = rules.iter().filter(|r| r.has_set_field()).collect();
        assert!(!rewriting.is_empty(), "switch {switch} rewrites flows");
        for rule in rewriting {
            let n = rule.actions.len();
            assert!(
                matches!(rule.actions[n - 1], flowprobe::Action::Forward(_)),
                "set-field actions end in a forward: {:?}",
                rule.actions
            );
            let forwards = rule
                .actions
                .iter()
                .filter(|a| matches!(a, flowprobe::Action::Forward(_)))
                .count();
            assert_eq!(forwards, 1, "exactly one output per rewrite rule");
        }
    }
}

#[test]
fn ledger_stays_bijective_and_covers_every_rewrite_hop() {
    let sim = run_two_flows(3);
    let ledger = &sim.controller.ledger;
    assert!(ledger.is_bijective());
    // two injected flows plus the reply flow, two rewrite hops each
    assert_eq!(ledger.len(), 6, "one entry per flow per rewrite hop");
}

#[test]
fn chain_install_rolls_back_atomically_when_a_table_is_full() {
    let mut scenario = line_scenario(3);
    scenario.topology.switches[1].table_capacity = 1;
    let (mut sim, _) = build_simulation(&scenario, scenario.seed).unwrap();
    // fill the middle switch so the chain cannot fit
    sim.install_rule(
        2,
        flowprobe::net::table::RuleSpec::new(
            flowprobe::FlowKey::src_only([9, 9, 9, 9].into()),
            1,
            vec![flowprobe::Action::Forward(101)],
        ),
    )
    .unwrap();
    sim.inject(SimTime::from_micros(1_000), 1, 1, syn([10, 0, 0, 1], [10, 0, 1, 1], 1));
    sim.run_until(SimTime::from_secs_f64(2.0));

    assert!(sim.snapshot(1).unwrap().is_empty(), "no partial state on s1");
    assert_eq!(sim.snapshot(2).unwrap().len(), 1, "only the pre-filled rule");
    assert!(sim.snapshot(3).unwrap().is_empty(), "no partial state on s3");
    assert!(sim
        .trace
        .records
        .iter()
        .any(|r| r.detail.contains("chain_table_full")));
}

/// Dispositions agree with the k=1 baseline for every chain length the
/// topology supports and a spread of allowed, denied and dark flows.
#[test]
fn dispositions_are_k_invariant_across_flow_mixes() {
    // destinations: responsive host (allowed), dark stub (allowed, no
    // reply), dark stub in the denied subnet
    let dsts: [[u8; 4]; 3] = [[10, 0, 1, 1], [10, 0, 1, 200], [10, 0, 7, 9]];
    let mut baseline: Option<Vec<Vec<String>>> = None;
    for k in 1..=3u32 {
        let scenario = line_scenario(k);
        let (mut sim, _) = build_simulation(&scenario, scenario.seed).unwrap();
        for (i, dst) in dsts.iter().enumerate() {
            sim.inject(
                SimTime::from_micros(1_000 + i as u64 * 400_000),
                1,
                1,
                syn([10, 0, 0, 1], *dst, i as u64 + 1),
            );
        }
        sim.run_until(SimTime::from_secs_f64(10.0));
        // disposition per destination: the set of hosts that received it
        let dispositions: Vec<Vec<String>> = dsts
            .iter()
            .map(|dst| {
                let needle = format!(">{}.{}.{}.{}", dst[0], dst[1], dst[2], dst[3]);
                sim.trace
                    .records
                    .iter()
                    .filter(|r| r.kind == TraceKind::Deliver && r.detail.contains(&needle))
                    .map(|r| r.detail.clone())
                    .collect()
            })
            .collect();
        match &baseline {
            None => baseline = Some(dispositions),
            Some(expected) => assert_eq!(
                &dispositions, expected,
                "terminal dispositions must not depend on k (k={k})"
            ),
        }
    }
}

#[test]
fn k1_behaves_exactly_like_no_obfuscation() {
    let with_k1 = run_two_flows(1);
    let mut scenario = line_scenario(1);
    scenario.obfuscation = None;
    let (mut plain, _) = build_simulation(&scenario, scenario.seed).unwrap();
    plain.inject(SimTime::from_micros(1_000), 1, 1, syn([10, 0, 0, 1], [10, 0, 1, 1], 1));
    plain.inject(SimTime::from_micros(500_000), 1, 1, syn([10, 0, 0, 1], [10, 0, 7, 9], 2));
    plain.run_until(SimTime::from_secs_f64(10.0));
    assert_eq!(with_k1.trace.to_csv(), plain.trace.to_csv());
}
