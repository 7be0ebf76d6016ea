//! Acceptance run: every criterion through its scenario files, one line each.
//!
//! `cargo test -p pilotwave-core --test acceptance` (add `--release` for the
//! quickest run). Exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use pilotwave::scenario::{parse_scenario, run, RunOptions};
use pilotwave::verify::{CheckOutcome, Criterion};

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Scenario files behind each criterion.
fn files(c: Criterion) -> Vec<&'static str> {
    match c {
        Criterion::CurvatureIdentity => vec!["ac01_curvature_identity.cfg"],
        Criterion::ScaleInvariance => vec!["ac02_scale_invariance.cfg"],
        Criterion::GeometricIdentities => vec!["ac03_geometric_identities.cfg"],
        Criterion::Equivalence => vec!["ac04_equivalence_gaussian.cfg", "ac04_equivalence_coherent.cfg"],
        Criterion::NormConservation => vec!["ac05_norm_conservation.cfg"],
        Criterion::PlaneWave => vec!["ac06_plane_wave.cfg"],
        Criterion::GaussianLaw => vec!["ac07_gaussian_law.cfg"],
        Criterion::BornRule => vec!["ac08_born_gaussian.cfg", "ac08_born_double_slit.cfg"],
        Criterion::NonCrossing => vec!["ac09_non_crossing.cfg"],
        Criterion::ClassicalLimit => vec!["ac10_classical_limit.cfg"],
        Criterion::KField => vec!["ac11_k_field.cfg"],
        Criterion::Reproducibility => vec!["ac12_reproducibility.cfg"],
    }
}

fn evaluate(c: Criterion, out: &std::path::Path) -> (CheckOutcome, f64) {
    let mut total = CheckOutcome::new(c);
    let mut worst_time: f64 = 0.0;
    for name in files(c) {
        let stem = name.trim_end_matches(".cfg");
        let short = stem.split_once('_').map_or(stem, |(_, rest)| rest);
        let text = match std::fs::read_to_string(scenario_dir().join(name)) {
            Ok(t) => t,
            Err(e) => {
                total.fail(format!("{name}: {e}"));
                continue;
            }
        };
        let scenario = match parse_scenario(&text, true) {
            Ok(s) => s,
            Err(e) => {
                total.fail(format!("{name}: {e}"));
                continue;
            }
        };
        let start = Instant::now();
        let result = run(&scenario, &RunOptions { out_dir: out.join(stem), seed: None });
        let secs = start.elapsed().as_secs_f64();
        worst_time = worst_time.max(secs);
        match result {
            Ok(m) => match m.check {
                Some(o) => total.merge(short, o),
                None => total.fail(format!("{name}: no check ran")),
            },
            Err(e) => total.fail(format!("{name}: {e}")),
        }
        if let Some(limit) = c.time_limit() {
            total.require(format!("{short}.seconds"), secs, secs <= limit, &format!("≤ {limit} s"));
        }
    }
    (total, worst_time)
}

/// Metrics worth a place on the one-line report.
const KEY_METRICS: [&str; 12] =
    ["ratio", "ks", "l1", "error", "drift", "inversions", "differing", "relative", "change", "steps", "seconds", "particles"];

fn line(o: &CheckOutcome) -> String {
    let mut parts: Vec<String> = o
        .metrics
        .iter()
        .filter(|(k, _)| KEY_METRICS.iter().any(|m| k.rsplit('.').next().is_some_and(|last| last.contains(m))))
        .map(|(k, v)| format!("{k}={v:.3e}"))
        .collect();
    parts.extend(o.failures.iter().map(|f| format!("FAILED: {f}")));
    parts.join("  ")
}

fn main() -> ExitCode {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let out = tempfile::tempdir().expect("temporary directory");
    let mut failed = 0;
    for c in Criterion::ALL {
        if !only.is_empty() && !only.iter().any(|o| c.name().contains(o.as_str())) {
            continue;
        }
        let (o, secs) = evaluate(c, out.path());
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("AC{:02} {:<22} {status} {secs:>7.2}s  {}", c.number(), c.name(), line(&o));
        if !o.passed {
            failed += 1;
        }
    }
    println!("{} criteria failed", failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
