use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
name = cli_packet
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
";

fn pilotwave(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pilotwave")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn validate_accepts_and_prints_canonical_form() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.cfg"), SMALL).unwrap();
    let out = pilotwave(&["validate", "s.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let out = pilotwave(&["validate", "s.cfg", "--canonical"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let canonical = text(&out.stdout);
    assert!(canonical.contains("solver.scheme = crank_nicolson"), "{canonical}");
    fs::write(dir.path().join("c.cfg"), &canonical).unwrap();
    assert_eq!(pilotwave(&["validate", "c.cfg"], dir.path()).status.code(), Some(0));
}

#[test]
fn validate_reports_problems_with_lines() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("dt = 0.02", "dt = 0.02\nspeed = 3").replace("sigma0 = 2", "sigma0 = -2");
    fs::write(dir.path().join("bad.cfg"), bad).unwrap();
    let out = pilotwave(&["validate", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("line 6") && err.contains("line 11"), "{err}");
    let out = pilotwave(&["--lenient", "validate", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("ignoring unknown key solver.speed") && err.contains("1 problem"), "{err}");
}

#[test]
fn missing_files_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pilotwave(&["validate", "nope.cfg"], dir.path()).status.code(), Some(2));
    assert_eq!(pilotwave(&["plot", "nope.json", "--kind", "trajectories"], dir.path()).status.code(), Some(2));
}

#[test]
fn run_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.cfg"), SMALL).unwrap();
    let out = pilotwave(&["run", "s.cfg", "--seed", "9"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}{}", text(&out.stdout), text(&out.stderr));
    let report = text(&out.stdout);
    assert!(report.contains("result     pass"), "{report}");
    let manifest = dir.path().join("runs/cli_packet/manifest.json");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);

    for kind in ["density_vs_t", "trajectories", "fringe_histogram"] {
        let out = pilotwave(&["plot", "runs/cli_packet/manifest.json", "--kind", kind], dir.path());
        assert_eq!(out.status.code(), Some(0), "{kind}: {}", text(&out.stderr));
        assert!(dir.path().join(format!("runs/cli_packet/plot_{kind}.dat")).exists());
    }
    let out = pilotwave(&["plot", "runs/cli_packet/manifest.json", "--kind", "residual_convergence"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = pilotwave(&["plot", "runs/cli_packet/manifest.json", "--kind", "heatmap"], dir.path());
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn residuals_converge_under_refinement() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.cfg"), SMALL.replace("n = 400", "n = 0")).unwrap();
    let out = pilotwave(&["residuals", "s.cfg", "--refine", "1", "--out-dir", "conv"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let table = text(&out.stdout);
    let ratio: f64 = table.lines().nth(2).and_then(|l| l.split_whitespace().nth(4)).and_then(|r| r.parse().ok()).expect(&table);
    assert!((3.0..5.0).contains(&ratio), "{table}");
    assert!(dir.path().join("conv/convergence.json").exists());
    assert!(dir.path().join("conv/plot_residual_convergence.dat").exists());
}
