use std::path::{Path, PathBuf};

use edgeswarm::attacks::{run_attack, run_suite, AttackKind, AttackParams};
use edgeswarm::broker::Posture;
use edgeswarm::scenario::{run_experiments, validate, Experiment, ScenarioConfig};
use edgeswarm::world::{World, WorldConfig};
use proptest::prelude::*;

fn shipped() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

#[test]
fn every_shipped_scenario_validates() {
    let all = shipped();
    assert!(all.len() >= 10);
    for p in all {
        let cfg = ScenarioConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(validate(&cfg), vec![], "{}", p.display());
        assert!(!cfg.experiments().is_empty(), "{} configures nothing", p.display());
    }
}

#[test]
fn every_attack_kind_runs_under_both_postures() {
    for posture in [Posture::Baseline, Posture::Hardened] {
        let outcomes = run_suite(&WorldConfig::swarm(1).with_posture(posture), &AttackParams::default()).unwrap();
        let kinds: Vec<AttackKind> = outcomes.iter().map(|o| o.kind).collect();
        assert_eq!(kinds, AttackKind::ALL.to_vec());
        for o in &outcomes {
            assert_eq!(o.posture, posture);
            assert!(!o.to_row().impact.is_empty());
            assert_eq!(o.kind.as_str().parse::<AttackKind>().unwrap(), o.kind);
        }
    }
    assert!("teleport".parse::<AttackKind>().is_err());
}

#[test]
fn blackout_window_is_its_decomposition() {
    for seed in [1, 2, 3, 4, 5] {
        let mut w = World::new(WorldConfig::swarm(seed)).unwrap();
        let o = run_attack(AttackKind::PartitionBlackout, &AttackParams::default(), &mut w).unwrap();
        let d = &o.evidence["decomposition"];
        let phases = ["partition_us", "network_recovery_us", "bridge_setup_us", "reconnect_us"]
            .iter()
            .map(|k| d[*k].as_u64().unwrap_or_else(|| panic!("missing {k} in {d}")))
            .sum::<u64>();
        assert_eq!(d["total_blackout_us"].as_u64().unwrap(), phases);
        assert_eq!(o.evidence["window_us"].as_u64().unwrap(), phases);
    }
}

#[test]
fn cloud_hosted_archetype_leaves_the_mesh() {
    let p = shipped().into_iter().find(|p| p.ends_with("cloud-hosted-egress.toml")).unwrap();
    let out = run_experiments(&ScenarioConfig::load(&p).unwrap(), &[Experiment::Egress]).unwrap();
    let row = &out.report.egress.unwrap()[0];
    assert!(row.report.external_ips >= 1);
    assert!(row.report.total_bytes > 0);
}

fn edge_local(publishes: u32, reads: u32, lights: u32, seed: u64) -> ScenarioConfig {
    ScenarioConfig::parse(&format!(
        "name = \"edge\"\narchetype = \"edge_local\"\nseed = {seed}\n\
         [egress]\nmqtt_publishes = {publishes}\nsensor_reads = {reads}\nlight_commands = {lights}\ninterval_us = 20_000\n"
    ))
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn edge_local_workloads_never_egress(p in 0u32..40, r in 0u32..60, l in 0u32..20, seed in 0..i64::MAX as u64) {
        let out = run_experiments(&edge_local(p, r, l, seed), &[Experiment::Egress]).unwrap();
        let row = &out.report.egress.unwrap()[0];
        prop_assert_eq!(row.operations as u32, p + r + l);
        prop_assert_eq!(row.report.external_ips, 0);
        prop_assert_eq!(row.report.total_bytes, 0);
        prop_assert_eq!(row.report.dns_queries, 0);
    }
}
