use std::fs;

use pilotwave::scenario::{emit_plot_data, parse_scenario, run, scenario_to_text, PlotError, PlotKind, RunOptions, STRONG_QUANTUM_FLAG};
use proptest::prelude::*;

const SMALL: &str = "\
name = small_packet
grid.x = -20 20 256 one_sided

[wave]
init = gaussian
sigma0 = 2
p0 = 0.5

[solver]
dt = 0.02
t_end = 1
snapshot_every = 10

[ensemble]
n = 400
seed = 5
dt = 0.05

[trajectories]
count = 4
";

#[test]
fn unknown_keys_are_rejected_with_their_line() {
    let text = format!("{SMALL}\n[solver]\nfoo = 1\n");
    let err = parse_scenario(&text, true).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("line 23"), "{msg}");
    assert!(msg.contains("foo"), "{msg}");
    assert!(parse_scenario(&text, false).is_ok());
}

#[test]
fn all_problems_are_reported_together() {
    let text = SMALL.replace("dt = 0.02", "dt = -1").replace("sigma0 = 2", "sigma0 = fast");
    let err = parse_scenario(&text, true).unwrap_err();
    assert!(err.0.len() >= 2, "{err}");
    assert!(err.0.iter().all(|i| i.line.is_some()), "{err}");
}

#[test]
fn canonical_text_spells_out_defaults() {
    let s = parse_scenario(SMALL, true).unwrap();
    let text = scenario_to_text(&s);
    for key in ["particle.m", "particle.hbar", "solver.scheme", "ensemble.sampler", "ensemble.bins"] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }
    assert_eq!(parse_scenario(&text, true).unwrap(), s);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn serialization_round_trips(
        sigma in 1.5f64..4.0,
        p0 in -1.0f64..1.0,
        m in 0.5f64..2.0,
        seed in any::<u64>(),
        n in 100usize..5000,
        every in 1usize..10,
    ) {
        let text = SMALL
            .replace("sigma0 = 2", &format!("sigma0 = {sigma}"))
            .replace("p0 = 0.5", &format!("p0 = {p0}\n\n[particle]\nm = {m}"))
            .replace("snapshot_every = 10", &format!("snapshot_every = {every}"))
            .replace("t_end = 1", &format!("t_end = {}", 0.02 * (every * 10) as f64))
            .replace("seed = 5", &format!("seed = {seed}"))
            .replace("n = 400", &format!("n = {n}"));
        let s = parse_scenario(&text, true).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let again = parse_scenario(&scenario_to_text(&s), true).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(again, s);
    }
}

#[test]
fn runs_are_reproducible_and_plottable() {
    let s = parse_scenario(SMALL, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = run(&s, &RunOptions { out_dir: dir.path().join("a"), seed: None }).unwrap();
    let b = run(&s, &RunOptions { out_dir: dir.path().join("b"), seed: None }).unwrap();
    assert!(a.passed, "{:?}", a.failures);
    assert_eq!(a.manifest_sha256, b.manifest_sha256);
    assert_eq!(a.outputs, b.outputs);

    let c = run(&s, &RunOptions { out_dir: dir.path().join("c"), seed: Some(6) }).unwrap();
    assert_ne!(a.manifest_sha256, c.manifest_sha256);

    let manifest = dir.path().join("a/manifest.json");
    for kind in [PlotKind::DensityVsT, PlotKind::Trajectories, PlotKind::FringeHistogram] {
        let path = emit_plot_data(&manifest, kind).unwrap();
        let body = fs::read_to_string(&path).unwrap();
        assert!(body.starts_with(&format!("# kind: {}", kind.name())));
        assert!(body.lines().any(|l| !l.starts_with('#') && !l.is_empty()));
    }
    match emit_plot_data(&manifest, PlotKind::ResidualConvergence) {
        Err(PlotError::Missing(_)) => {}
        other => panic!("expected a missing artifact, got {other:?}"),
    }
}

#[test]
fn tampered_outputs_are_missing_from_plots() {
    let s = parse_scenario(SMALL, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run(&s, &RunOptions { out_dir: dir.path().to_path_buf(), seed: None }).unwrap();
    fs::remove_file(dir.path().join("trajectories.csv")).unwrap();
    assert!(emit_plot_data(&dir.path().join("manifest.json"), PlotKind::Trajectories).is_err());
}

#[test]
fn strong_coupling_is_flagged() {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/strong_quantum.cfg")).unwrap();
    let s = parse_scenario(&text, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = run(&s, &RunOptions { out_dir: dir.path().to_path_buf(), seed: None }).unwrap();
    assert!(m.flags.iter().any(|f| f == STRONG_QUANTUM_FLAG), "{:?}", m.flags);
}

#[test]
fn invalid_scenarios_do_not_run() {
    let text = SMALL.replace("snapshot_every = 10", "snapshot_every = 7");
    assert!(parse_scenario(&text, true).is_err());
}
