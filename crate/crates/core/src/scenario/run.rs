use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{scenario_to_text, CheckSpec, InitSpec, Scenario, SchemeSpec};
use crate::dynamics::{
    guiding_velocity, integrate, quantum_mass, step_for_spacing, DynamicsError, ExternalFields, GuidanceMode,
    TrajectoryState,
};
use crate::ensemble::{run_ensemble, sample_initial, EnsembleResult, PathStatus, Sampler};
use crate::geometry::WeylStructure;
use crate::grid::{GridSpec, V4};
use crate::verify::{self, CheckOutcome, ConvergenceLevel, Criterion, GaussianSetup};
use crate::wave::{
    continuity_residual, polar_decompose, real_system_residuals, solve_klein_gordon, solve_schrodinger, spacetime_polar,
    write_snapshot_csv, KgOptions, PolarForm, ResidualMode, ResidualNorms, ResidualReport, Scheme, SolverKind,
    WaveSeries,
};

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Solve,
    Decompose,
    Residuals,
    QuantumMass,
    Trajectories,
    Ensemble,
    Check,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage} stage failed: {message}")]
pub struct RunError {
    pub stage: Stage,
    pub message: String,
}

fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> RunError {
    move |e| RunError { stage, message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Replaces the scenario's ensemble seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the manifest.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Fate of one particle moved with the full equations of motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub start: V4,
    pub status: String,
    pub t_final: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n: usize,
    pub valid: usize,
    pub exclusion_fraction: f64,
    pub max_ks: Option<f64>,
    pub max_l1: f64,
    pub final_l1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: String,
    pub steps: usize,
    pub dt: f64,
    pub snapshots: usize,
    pub norm_drift: Option<f64>,
    pub energy_drift: Option<f64>,
    pub residuals: Option<ResidualNorms>,
    pub continuity_max: Option<f64>,
    /// Smallest `μ²` where `b ≥ core_rel · max b`.
    pub min_mu2_core: Option<f64>,
    pub invalid_mass_core: usize,
    pub trajectories: Vec<TrajectorySummary>,
    pub ensemble: Option<EnsembleSummary>,
    pub warnings: Vec<String>,
}

/// Record of one run. `manifest_sha256` covers everything except `timing`
/// and itself, so identical inputs give identical hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub scenario_sha256: String,
    pub code_version: String,
    pub seed: u64,
    pub outputs: Vec<OutputFile>,
    pub summary: RunSummary,
    pub flags: Vec<String>,
    pub check: Option<CheckOutcome>,
    /// Run thresholds that were not met.
    pub failures: Vec<String>,
    pub passed: bool,
    pub manifest_sha256: String,
    /// Wall-clock seconds per stage.
    pub timing: BTreeMap<String, f64>,
}

impl RunManifest {
    fn content_hash(&self) -> String {
        let mut m = self.clone();
        m.manifest_sha256.clear();
        m.timing.clear();
        sha256_hex(&serde_json::to_vec(&m).expect("manifest serializes"))
    }

    fn seal(&mut self) {
        self.passed = self.failures.is_empty() && self.check.as_ref().is_none_or(|c| c.passed);
        self.manifest_sha256 = self.content_hash();
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Flag raised when the quantum mass turns imaginary where the wave lives.
pub const STRONG_QUANTUM_FLAG: &str = "strong-quantum-regime";
/// Schrödinger norm drift tolerated by a plain run.
pub const RUN_NORM_LIMIT: f64 = 1e-8;
/// KS bound of a plain run: the larger of 0.03 and the 0.1% critical value
/// `1.95/√n`.
pub fn run_ks_limit(n: usize) -> f64 {
    (1.95 / (n as f64).sqrt()).max(0.03)
}

struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(dir).map_err(at(Stage::Output))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), RunError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(at(Stage::Output))?;
        }
        fs::write(&path, bytes).map_err(|e| RunError { stage: Stage::Output, message: format!("{}: {e}", path.display()) })?;
        self.files.push(OutputFile { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<(), RunError> {
        let mut s = serde_json::to_vec_pretty(v).map_err(at(Stage::Output))?;
        s.push(b'\n');
        self.write(rel, &s)
    }
}

struct Timer {
    start: Instant,
    stages: BTreeMap<String, f64>,
}

impl Timer {
    fn new() -> Self {
        Self { start: Instant::now(), stages: BTreeMap::new() }
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        *self.stages.entry(stage.to_string()).or_default() += (now - self.start).as_secs_f64();
        self.start = now;
    }
}

/// Evolve the scenario's wave on `grid` with step `dt`.
fn solve(s: &Scenario, grid: &GridSpec, dt: f64, ext: &ExternalFields) -> Result<WaveSeries, RunError> {
    let (psi, dot) = s.initial_field(grid).map_err(at(Stage::Setup))?;
    let v = &s.solver;
    match v.kind {
        SolverKind::Schrodinger => {
            let scheme = match v.scheme {
                SchemeSpec::SplitStep => Scheme::SplitStep,
                _ => Scheme::CrankNicolson,
            };
            solve_schrodinger(&psi, ext, v.t_end, dt, scheme, v.snapshot_every).map_err(at(Stage::Solve))
        }
        SolverKind::KleinGordon => {
            let opts = KgOptions { t_end: v.t_end, dt, snapshot_every: v.snapshot_every };
            solve_klein_gordon(&psi, &dot.unwrap_or_default(), ext, &opts).map_err(at(Stage::Solve))
        }
    }
}

fn residual_mode(kind: SolverKind) -> ResidualMode {
    match kind {
        SolverKind::Schrodinger => ResidualMode::Nonrelativistic,
        SolverKind::KleinGordon => ResidualMode::Relativistic,
    }
}

fn b_floor(s: &Scenario) -> f64 {
    s.ensemble.b_floor_rel
}

/// Real-system residual norms over `refine` halvings of `(h, Δt)` with the
/// snapshot interval in steps held fixed, so snapshot spacing halves too.
pub fn residual_series(s: &Scenario, refine: usize) -> Result<Vec<ConvergenceLevel>, RunError> {
    let ext = s.external_fields();
    let mut grid = s.grid().map_err(at(Stage::Setup))?;
    let mut dt = s.solver.dt;
    let mut out = Vec::with_capacity(refine + 1);
    for level in 0..=refine {
        if level > 0 {
            grid = grid.refined();
            dt *= 0.5;
        }
        let series = solve(s, &grid, dt, &ext)?;
        let polar = spacetime_polar(&series, b_floor(s)).map_err(at(Stage::Decompose))?;
        let res = real_system_residuals(&polar, &s.particle, &ext, residual_mode(s.solver.kind)).map_err(at(Stage::Residuals))?;
        out.push(ConvergenceLevel {
            h: grid.min_spacing(),
            dt: series.dt,
            snapshot_dt: series.dt * s.solver.snapshot_every as f64,
            norms: res.norms(s.core_rel),
        });
    }
    Ok(out)
}

fn report(name: &str, values: &[f64], weight: &[f64], core_rel: f64, grid: &GridSpec, dt: f64) -> ResidualReport {
    let core: Vec<f64> = values.iter().zip(weight).filter(|(v, w)| **w >= core_rel && v.is_finite()).map(|(v, _)| *v).collect();
    let max = core.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let l2 = if core.is_empty() { 0.0 } else { (core.iter().map(|v| v * v).sum::<f64>() / core.len() as f64).sqrt() };
    ResidualReport { name: name.into(), max, l2, grid: grid.clone(), h: grid.min_spacing(), dt: Some(dt) }
}

fn status_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_else(|| "unknown".into())
}

fn error_status(e: &DynamicsError) -> String {
    match e {
        DynamicsError::InvalidMass { .. } => "invalid_mass",
        DynamicsError::ExitedDomain { .. } => "exited_domain",
        DynamicsError::NodeProximity { .. } => "node",
        DynamicsError::NotTimelike { .. } => "not_timelike",
        _ => "failed",
    }
    .into()
}

/// Particles sampled from `|Ψ₀|²` and moved with the quantum-mass equations
/// of motion from their guided initial velocity.
fn eom_trajectories(
    s: &Scenario,
    series: &WaveSeries,
    st: &PolarForm,
    mu: &crate::dynamics::QuantumMassField,
    ext: &ExternalFields,
    seed: u64,
) -> Result<(Vec<TrajectorySummary>, Vec<crate::dynamics::Trajectory>), RunError> {
    if s.trajectories == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let first = &series.snapshots[0];
    let sampler = if first.grid.ndim() == 1 { s.ensemble.sampler } else { Sampler::Rejection };
    let starts = sample_initial(&first.grid, &first.density(), s.trajectories, seed, sampler).map_err(at(Stage::Trajectories))?;
    let p0 = polar_decompose(first, b_floor(s));
    let h = first.grid.min_spacing().min(series.dt * s.solver.snapshot_every as f64);
    let t_end = series.last().t;
    let mut summaries = Vec::new();
    let mut paths = Vec::new();
    for x in starts {
        let guided = match s.solver.kind {
            SolverKind::Schrodinger => guiding_velocity(&p0, ext, &s.particle, &x, GuidanceMode::Nonrelativistic)
                .and_then(|g| TrajectoryState::from_velocity(x, g.velocity, &ext.metric)),
            SolverKind::KleinGordon => guiding_velocity(st, ext, &s.particle, &x, GuidanceMode::Relativistic)
                .map(|g| TrajectoryState { x, u: g.u, s: 0.0 }),
        };
        let outcome = guided.and_then(|start| integrate(start, mu, ext, s.particle.e, step_for_spacing(h, &start.u), t_end));
        match outcome {
            Ok(t) => {
                summaries.push(TrajectorySummary {
                    start: x,
                    status: status_name(&t.status),
                    t_final: t.last().x[0],
                    steps: t.states.len() - 1,
                });
                paths.push(t);
            }
            Err(e @ (DynamicsError::Params(_) | DynamicsError::Geometry(_) | DynamicsError::Grid(_) | DynamicsError::GridMismatch)) => {
                return Err(at(Stage::Trajectories)(e));
            }
            Err(e) => summaries.push(TrajectorySummary { start: x, status: error_status(&e), t_final: x[0], steps: 0 }),
        }
    }
    Ok((summaries, paths))
}

fn trajectories_csv(paths: &[crate::dynamics::Trajectory]) -> Result<Vec<u8>, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = at(Stage::Output);
    w.write_record(["id", "s", "t", "x", "y", "z", "u_t", "u_x", "u_y", "u_z", "mu"]).map_err(&io)?;
    for (id, t) in paths.iter().enumerate() {
        for (st, mu) in t.states.iter().zip(&t.mu) {
            let mut row = vec![id.to_string(), format!("{:e}", st.s)];
            row.extend(st.x.iter().chain(&st.u).map(|v| format!("{v:e}")));
            row.push(format!("{mu:e}"));
            w.write_record(&row).map_err(&io)?;
        }
    }
    w.into_inner().map_err(|e| RunError { stage: Stage::Output, message: e.to_string() })
}

fn ensemble_csvs(res: &EnsembleResult, record: usize) -> Result<(Vec<u8>, Vec<u8>), RunError> {
    let io = at(Stage::Output);
    let mut paths = csv::Writer::from_writer(Vec::new());
    paths.write_record(["particle", "k", "t", "x", "y", "z", "status"]).map_err(&io)?;
    for (id, p) in res.paths.iter().enumerate().take(record) {
        let status = status_name(&p.status);
        for (k, x) in p.positions.iter().enumerate() {
            paths
                .write_record([
                    id.to_string(),
                    k.to_string(),
                    format!("{:e}", res.times[k]),
                    format!("{:e}", x[1]),
                    format!("{:e}", x[2]),
                    format!("{:e}", x[3]),
                    status.clone(),
                ])
                .map_err(&io)?;
        }
    }
    let mut last = csv::Writer::from_writer(Vec::new());
    last.write_record(["particle", "x", "y", "z"]).map_err(&io)?;
    for (id, p) in res.paths.iter().enumerate() {
        if p.status == PathStatus::Completed {
            let x = p.positions.last().expect("completed paths reach every snapshot");
            last.write_record([id.to_string(), format!("{:e}", x[1]), format!("{:e}", x[2]), format!("{:e}", x[3])]).map_err(&io)?;
        }
    }
    let done = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| RunError { stage: Stage::Output, message: e.to_string() });
    Ok((done(paths)?, done(last)?))
}

/// Inputs the checks draw on.
struct Context<'a> {
    scenario: &'a Scenario,
    series: &'a WaveSeries,
    ensemble: Option<&'a EnsembleResult>,
    ext: &'a ExternalFields,
}

fn gaussian_setup(s: &Scenario) -> Result<(GaussianSetup, usize), RunError> {
    let d = s.axes[0].coord.index() - 1;
    match &s.init {
        Some(InitSpec::Gaussian { x0, sigma0, p0 }) => Ok((GaussianSetup { center: x0[d], sigma0: *sigma0, p0: p0[d] }, d)),
        _ => Err(RunError { stage: Stage::Check, message: "check needs a gaussian init".into() }),
    }
}

fn check_err(e: impl fmt::Display) -> RunError {
    RunError { stage: Stage::Check, message: e.to_string() }
}

fn needs_ensemble<'a>(ctx: &Context<'a>) -> Result<&'a EnsembleResult, RunError> {
    ctx.ensemble.ok_or(RunError { stage: Stage::Check, message: "check needs an ensemble (ensemble.n > 0)".into() })
}

fn wave_check(spec: &CheckSpec, ctx: &Context, out: &mut Outputs) -> Result<CheckOutcome, RunError> {
    let s = ctx.scenario;
    let tol = spec.tolerance();
    Ok(match spec.criterion {
        Criterion::Equivalence => {
            let levels = residual_series(s, spec.refine)?;
            out.json("convergence.json", &levels)?;
            verify::equivalence(&levels)
        }
        Criterion::NormConservation => verify::norm_conservation(ctx.series, tol, spec.min_steps),
        Criterion::PlaneWave => {
            let Some(InitSpec::PlaneWave { p }) = &s.init else {
                return Err(check_err("plane_wave check needs a plane_wave init"));
            };
            verify::plane_wave_exactness(ctx.series, ctx.ensemble, *p, ctx.ext, tol).map_err(check_err)?
        }
        Criterion::GaussianLaw => {
            let (setup, _) = gaussian_setup(s)?;
            verify::gaussian_law(ctx.series, &setup, &s.ensemble, ctx.ext, spec.spreading_times, tol).map_err(check_err)?
        }
        Criterion::BornRule => {
            let res = needs_ensemble(ctx)?;
            let mut o = verify::born_rule(res, spec.min_particles, spec.ks_limit, spec.l1_limit);
            if let Some(offset) = spec.control_offset {
                let (setup, d) = gaussian_setup(s)?;
                let mut x = [0.0; 4];
                x[d + 1] = setup.center + offset;
                o.merge("control", verify::point_mass_control(ctx.series, x, &s.ensemble, ctx.ext).map_err(check_err)?);
            }
            o
        }
        Criterion::NonCrossing => verify::non_crossing(needs_ensemble(ctx)?, ctx.series.grid(), spec.min_particles).map_err(check_err)?,
        Criterion::ClassicalLimit => {
            let (setup, _) = gaussian_setup(s)?;
            let starts =
                if spec.starts.is_empty() { vec![0.5 * setup.sigma0, setup.sigma0, 2.0 * setup.sigma0] } else { spec.starts.clone() };
            verify::classical_limit(ctx.series, ctx.ext, &spec.eps, setup.center, &starts, tol).map_err(check_err)?
        }
        c => return Err(check_err(format!("{c} is not a wave check"))),
    })
}

fn geometric_check(s: &Scenario, c: Criterion) -> Result<CheckOutcome, RunError> {
    let template = s.axes.first().ok_or(RunError { stage: Stage::Check, message: "need a template axis".into() })?;
    let r = match c {
        Criterion::CurvatureIdentity => verify::curvature_identity(template),
        Criterion::ScaleInvariance => verify::scale_invariance(template),
        Criterion::GeometricIdentities => verify::geometric_identities(template),
        Criterion::KField => verify::k_field(template),
        _ => unreachable!("only geometric criteria reach here"),
    };
    r.map_err(at(Stage::Check))
}

/// One full pipeline into `dir`, returning the sealed manifest.
fn execute(s: &Scenario, dir: &Path) -> Result<RunManifest, RunError> {
    let mut timer = Timer::new();
    let text = scenario_to_text(s);
    let mut out = Outputs::new(dir)?;
    out.write("scenario.cfg", text.as_bytes())?;
    let mut m = RunManifest {
        scenario: s.name.clone(),
        scenario_sha256: sha256_hex(text.as_bytes()),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: s.ensemble.seed,
        outputs: Vec::new(),
        summary: RunSummary::default(),
        flags: Vec::new(),
        check: None,
        failures: Vec::new(),
        passed: false,
        manifest_sha256: String::new(),
        timing: BTreeMap::new(),
    };
    let criterion = s.check.as_ref().map(|c| c.criterion);

    if !s.needs_wave() {
        let c = criterion.expect("geometric scenarios carry a check");
        let outcome = geometric_check(s, c)?;
        timer.lap(Stage::Check);
        out.json("check.json", &outcome)?;
        m.check = Some(outcome);
    } else {
        let ext = s.external_fields();
        let grid = s.grid().map_err(at(Stage::Setup))?;
        timer.lap(Stage::Setup);
        let series = solve(s, &grid, s.solver.dt, &ext)?;
        timer.lap(Stage::Solve);
        let sum = &mut m.summary;
        sum.scheme = series.diagnostics.scheme.clone();
        sum.steps = series.steps;
        sum.dt = series.dt;
        sum.snapshots = series.snapshots.len();
        sum.warnings = series.diagnostics.warnings.clone();
        if s.solver.kind == SolverKind::Schrodinger {
            let drift = series.snapshots.iter().map(|f| (f.norm_sq() - 1.0).abs()).fold(series.diagnostics.total_norm_drift, f64::max);
            sum.norm_drift = Some(drift);
            if drift > RUN_NORM_LIMIT {
                m.failures.push(format!("norm drift {drift:e} above {RUN_NORM_LIMIT:e}"));
            }
        }
        sum.energy_drift = series.diagnostics.energy_drift;

        let polar = spacetime_polar(&series, b_floor(s)).map_err(at(Stage::Decompose))?;
        timer.lap(Stage::Decompose);
        let res = real_system_residuals(&polar, &s.particle, &ext, residual_mode(s.solver.kind)).map_err(at(Stage::Residuals))?;
        let sdt = series.dt * s.solver.snapshot_every as f64;
        let mut reports = vec![
            report("hamilton_jacobi", &res.res_a, &res.weight, s.core_rel, &polar.grid, sdt),
            report("continuity", &res.res_b, &res.weight, s.core_rel, &polar.grid, sdt),
        ];
        m.summary.residuals = Some(res.norms(s.core_rel));
        if s.solver.kind == SolverKind::Schrodinger {
            let cont = continuity_residual(&polar, &s.particle, &ext).map_err(at(Stage::Residuals))?;
            let r = report("probability_flux", &cont, &res.weight, s.core_rel, &polar.grid, sdt);
            m.summary.continuity_max = Some(r.max);
            reports.push(r);
        }
        timer.lap(Stage::Residuals);

        let w = WeylStructure::flat_with_factor(&polar.grid, polar.b.clone()).map_err(at(Stage::QuantumMass))?;
        let mu = quantum_mass(&w, &s.particle, &ext).map_err(at(Stage::QuantumMass))?;
        let bmax = polar.max_b();
        let core: Vec<usize> = (0..polar.grid.len()).filter(|&i| polar.b[i] >= s.core_rel * bmax).collect();
        m.summary.min_mu2_core = core.iter().map(|&i| mu.mu2()[i]).reduce(f64::min);
        m.summary.invalid_mass_core = core.iter().filter(|&&i| !mu.valid()[i]).count();
        timer.lap(Stage::QuantumMass);

        let (trajs, paths) = eom_trajectories(s, &series, &polar, &mu, &ext, s.ensemble.seed)?;
        let strong = m.summary.min_mu2_core.is_some_and(|v| v <= 0.0) || trajs.iter().any(|t| t.status == "invalid_mass");
        if strong {
            m.flags.push(STRONG_QUANTUM_FLAG.into());
        }
        m.summary.trajectories = trajs;
        timer.lap(Stage::Trajectories);

        let ensemble = if s.ensemble.n > 0 {
            let r = run_ensemble(&series, &s.ensemble, &s.particle, &ext).map_err(at(Stage::Ensemble))?;
            let max_ks = r.max_ks();
            if let Some(ks) = max_ks {
                let limit = run_ks_limit(r.paths.len());
                if ks > limit {
                    m.failures.push(format!("ensemble KS {ks:.4} above {limit:.4}"));
                }
            }
            m.summary.ensemble = Some(EnsembleSummary {
                n: r.paths.len(),
                valid: r.valid_paths().count(),
                exclusion_fraction: r.exclusion_fraction,
                max_ks,
                max_l1: r.max_l1(),
                final_l1: r.stats.last().map(|x| x.l1).unwrap_or(0.0),
            });
            Some(r)
        } else {
            None
        };
        timer.lap(Stage::Ensemble);

        if let Some(spec) = s.check.as_ref().filter(|c| c.criterion != Criterion::Reproducibility) {
            let ctx = Context { scenario: s, series: &series, ensemble: ensemble.as_ref(), ext: &ext };
            let outcome = wave_check(spec, &ctx, &mut out)?;
            out.json("check.json", &outcome)?;
            m.check = Some(outcome);
        }
        timer.lap(Stage::Check);

        for (k, snap) in series.snapshots.iter().enumerate() {
            let mut buf = Vec::new();
            write_snapshot_csv(snap, &mut buf).map_err(at(Stage::Output))?;
            out.write(&format!("snapshots/snapshot_{k:04}.csv"), &buf)?;
        }
        out.json("residuals.json", &reports)?;
        out.write("eom_trajectories.csv", &trajectories_csv(&paths)?)?;
        if let Some(r) = &ensemble {
            let (p, last) = ensemble_csvs(r, s.record)?;
            out.write("trajectories.csv", &p)?;
            out.write("positions_final.csv", &last)?;
            out.json("ensemble.json", &(&r.times, &r.stats, r.exclusion_fraction))?;
        }
    }
    m.outputs = out.files;
    m.seal();
    timer.lap(Stage::Output);
    m.timing = timer.stages;
    write_manifest(&m, dir)?;
    Ok(m)
}

fn write_manifest(m: &RunManifest, dir: &Path) -> Result<(), RunError> {
    let mut f = fs::File::create(dir.join("manifest.json")).map_err(at(Stage::Output))?;
    serde_json::to_writer_pretty(&mut f, m).map_err(at(Stage::Output))?;
    f.write_all(b"\n").map_err(at(Stage::Output))
}

/// Run a scenario, writing outputs and `manifest.json` under `opts.out_dir`.
///
/// A reproducibility check runs the pipeline twice, into `first/` and
/// `second/`, and compares the manifests.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunManifest, RunError> {
    let mut s = scenario.clone();
    if let Some(seed) = opts.seed {
        s.ensemble.seed = seed;
    }
    let issues = s.validate();
    if !issues.is_empty() {
        let msg: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
        return Err(RunError { stage: Stage::Setup, message: msg.join("; ") });
    }
    if s.check.as_ref().map(|c| c.criterion) != Some(Criterion::Reproducibility) {
        return execute(&s, &opts.out_dir);
    }
    let started = Instant::now();
    let a = execute(&s, &opts.out_dir.join("first"))?;
    let b = execute(&s, &opts.out_dir.join("second"))?;
    let mut outcome = CheckOutcome::new(Criterion::Reproducibility);
    if a.manifest_sha256 != b.manifest_sha256 {
        outcome.fail(format!("manifest hashes differ: {} vs {}", a.manifest_sha256, b.manifest_sha256));
    }
    let differing = a.outputs.iter().zip(&b.outputs).filter(|(x, y)| x != y).count() + a.outputs.len().abs_diff(b.outputs.len());
    outcome.require("differing_outputs", differing as f64, differing == 0, "= 0");
    outcome.metric("outputs", a.outputs.len() as f64);
    let mut m = a.clone();
    m.outputs = Vec::new();
    for (prefix, run) in [("first", &a), ("second", &b)] {
        m.outputs.extend(run.outputs.iter().map(|o| OutputFile { path: format!("{prefix}/{}", o.path), ..o.clone() }));
    }
    m.check = Some(outcome);
    m.seal();
    m.timing = BTreeMap::from([("total".to_string(), started.elapsed().as_secs_f64())]);
    write_manifest(&m, &opts.out_dir)?;
    Ok(m)
}
