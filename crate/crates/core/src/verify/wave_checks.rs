use serde::{Deserialize, Serialize};

use super::{require_order, CheckOutcome, Criterion, VerifyError, SECOND_ORDER_BAND};
use crate::dynamics::{
    guiding_velocity, integrate, quantum_mass, step_for_spacing, ClassicalMass, ExternalFields, GuidanceMode,
    ParticleParams, TrajectoryState, TrajectoryStatus,
};
use crate::ensemble::{non_crossing_check, run_ensemble_from, EnsembleConfig, EnsembleResult};
use crate::geometry::{invert4, WeylStructure};
use crate::grid::{Axis, Boundary, GridSpec, V4};
use crate::wave::init::{free_gaussian_width, plane_wave, plane_wave_energy, spreading_time};
use crate::wave::{
    polar_decompose, spacetime_polar, ResidualNorms, SolverDiagnostics, SolverKind, WaveSeries, DEFAULT_B_FLOOR_REL,
};

/// Residual norms of one member of a refinement series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLevel {
    pub h: f64,
    pub dt: f64,
    /// Spacing of the snapshots entering time derivatives.
    pub snapshot_dt: f64,
    pub norms: ResidualNorms,
}

/// Real-system residuals along a refinement series: every halving of
/// `(h, Δt)` must cut both maxima by about four.
pub fn equivalence(levels: &[ConvergenceLevel]) -> CheckOutcome {
    let mut out = CheckOutcome::new(Criterion::Equivalence);
    if levels.len() < 2 {
        out.fail("need at least two refinement levels");
        return out;
    }
    for (k, l) in levels.iter().enumerate() {
        let scale = l.h * l.h + l.snapshot_dt * l.snapshot_dt;
        out.metric(format!("level{k}.h"), l.h);
        out.metric(format!("level{k}.c_a"), l.norms.max_a / scale);
        out.metric(format!("level{k}.c_b"), l.norms.max_b / scale);
        if l.norms.points == 0 {
            out.fail(format!("level {k} has no points off the node mask"));
        }
    }
    for k in 1..levels.len() {
        let (c, f) = (&levels[k - 1].norms, &levels[k].norms);
        require_order(&mut out, &format!("res_a.{}{}", k - 1, k), c.max_a, f.max_a, SECOND_ORDER_BAND);
        require_order(&mut out, &format!("res_b.{}{}", k - 1, k), c.max_b, f.max_b, SECOND_ORDER_BAND);
    }
    out
}

/// Largest drift of `‖ψ‖²` from one across the snapshots and at the end.
pub fn norm_conservation(series: &WaveSeries, tolerance: f64, min_steps: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new(Criterion::NormConservation);
    let drift = series.snapshots.iter().map(|s| (s.norm_sq() - 1.0).abs()).fold(0.0, f64::max);
    let SolverDiagnostics { total_norm_drift, max_step_norm_drift, .. } = series.diagnostics;
    out.require("steps", series.steps as f64, series.steps >= min_steps, &format!("≥ {min_steps}"));
    out.require("snapshot_drift", drift, drift <= tolerance, &format!("≤ {tolerance:e}"));
    out.require("total_drift", total_norm_drift, total_norm_drift <= tolerance, &format!("≤ {tolerance:e}"));
    out.metric("max_step_drift", max_step_norm_drift);
    out
}

/// Signed distance on a periodic axis, mapped into `[-L/2, L/2)`.
fn periodic_gap(d: f64, axis: &Axis) -> f64 {
    if axis.boundary == Boundary::Periodic {
        let l = axis.length();
        (d + 0.5 * l).rem_euclid(l) - 0.5 * l
    } else {
        d
    }
}

/// Plane waves: the Hamilton-Jacobi residual of the exact relativistic wave
/// (sampled on a space-time grid) and the speed of guided particles, both
/// relativistic (`p/E`) and from the solved Schrödinger series (`p/m`).
pub fn plane_wave_exactness(
    series: &WaveSeries,
    ensemble: Option<&EnsembleResult>,
    p: [f64; 3],
    ext: &ExternalFields,
    tolerance: f64,
) -> Result<CheckOutcome, VerifyError> {
    let mut out = CheckOutcome::new(Criterion::PlaneWave);
    let space = series.grid();
    if space.ndim() != 1 {
        return Err(VerifyError::Setup("plane-wave check runs on one spatial axis".into()));
    }
    let ax = space.axes()[0].clone();
    let c = ax.coord.index();
    let params = series.snapshots[0].params;
    let e = plane_wave_energy(p, &params, SolverKind::KleinGordon);
    let (pc, mass_e) = (p[c - 1], e);

    // relativistic wave sampled exactly on a short time window
    let span = 0.25 * ax.length() / (1.0 + pc.abs() / mass_e);
    let times: Vec<f64> = (0..9).map(|k| k as f64 * span / 8.0).collect();
    let snapshots = times
        .iter()
        .map(|&t| plane_wave(space, p, t, &params, SolverKind::KleinGordon))
        .collect::<Result<Vec<_>, _>>()?;
    let rel = WaveSeries { snapshots, psi_dot: Vec::new(), dt: span / 8.0, steps: 8, diagnostics: SolverDiagnostics::default() };
    let polar = spacetime_polar(&rel, DEFAULT_B_FLOOR_REL)?;
    let st = polar.grid.clone();
    let w = WeylStructure::flat_with_factor(&st, polar.b.clone())?;
    let mu = quantum_mass(&w, &params, ext)?;
    let ginv = invert4(&ext.metric).ok_or(VerifyError::Setup("external metric is singular".into()))?;
    let mut hj: f64 = 0.0;
    for i in 0..st.len() {
        let x = st.point(i);
        let k = ext.coupling(params.e, &x).ok_or(VerifyError::Setup("external field undefined on grid".into()))?.k;
        let ds = polar.grad_s(i);
        let pl: V4 = std::array::from_fn(|l| ds[l] + k[l]);
        let p2: f64 = (0..4).map(|a| (0..4).map(|b| ginv[a][b] * pl[a] * pl[b]).sum::<f64>()).sum();
        hj = hj.max((p2 - mu.mu2()[i]).abs() / (e * e));
    }
    out.require("hj_relative", hj, hj <= tolerance, &format!("≤ {tolerance:e}"));

    let speed = pc / e;
    let mut v_err: f64 = 0.0;
    for k in [1usize, 3, 5] {
        let mut x = [0.0; 4];
        x[0] = 0.5 * span;
        x[c] = ax.min + k as f64 * ax.length() / 7.0;
        let g = guiding_velocity(&polar, ext, &params, &x, GuidanceMode::Relativistic)?;
        v_err = v_err.max((g.velocity[c - 1] - speed).abs());
    }
    out.require("relativistic_guidance_error", v_err, v_err <= tolerance, &format!("≤ {tolerance:e}"));

    let mut x0 = [0.0; 4];
    x0[c] = ax.min + 0.3 * ax.length();
    let g0 = guiding_velocity(&polar, ext, &params, &x0, GuidanceMode::Relativistic)?;
    let start = TrajectoryState { x: x0, u: g0.u, s: 0.0 };
    let traj = integrate(start, &mu, ext, params.e, step_for_spacing(ax.spacing(), &g0.u), span)?;
    if traj.status != TrajectoryStatus::Completed {
        out.fail(format!("relativistic trajectory halted: {:?}", traj.status));
    }
    let end = traj.last();
    let traj_err = (end.velocity()[c - 1] - speed).abs().max(((end.x[c] - x0[c]) / end.x[0] - speed).abs());
    out.require("relativistic_trajectory_error", traj_err, traj_err <= tolerance, &format!("≤ {tolerance:e}"));

    // nonrelativistic guidance from the solved series
    let v_nr = pc / params.m;
    let last = series.last();
    let lp = polar_decompose(last, DEFAULT_B_FLOOR_REL);
    let mut nr_err: f64 = 0.0;
    for k in [1usize, 3, 5] {
        let mut x = [last.t, 0.0, 0.0, 0.0];
        x[c] = ax.min + k as f64 * ax.length() / 7.0;
        let g = guiding_velocity(&lp, ext, &params, &x, GuidanceMode::Nonrelativistic)?;
        nr_err = nr_err.max((g.velocity[c - 1] - v_nr).abs());
    }
    out.require("nonrelativistic_guidance_error", nr_err, nr_err <= tolerance, &format!("≤ {tolerance:e}"));
    if let Some(res) = ensemble {
        let t_end = *res.times.last().expect("times");
        let t0 = res.times[0];
        let err = res
            .valid_paths()
            .map(|path| {
                let d = path.positions.last().expect("positions")[c] - path.positions[0][c];
                (periodic_gap(d - v_nr * (t_end - t0), &ax) / (t_end - t0)).abs()
            })
            .fold(0.0, f64::max);
        out.require("ensemble_speed_error", err, err <= tolerance, &format!("≤ {tolerance:e}"));
        out.metric("ensemble_max_ks", res.max_ks().unwrap_or(f64::NAN));
    }
    Ok(out)
}

/// Initial free Gaussian packet along the single spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSetup {
    pub center: f64,
    pub sigma0: f64,
    pub p0: f64,
}

/// Guided trajectories of a free Gaussian against the closed-form law
/// `x(t) - c(t) = (x₀ - c) σ(t)/σ₀` for starts within `2σ₀` of the centre,
/// over `spreading_times` spreading times.
pub fn gaussian_law(
    series: &WaveSeries,
    setup: &GaussianSetup,
    cfg: &EnsembleConfig,
    ext: &ExternalFields,
    spreading_times: f64,
    tolerance: f64,
) -> Result<CheckOutcome, VerifyError> {
    let mut out = CheckOutcome::new(Criterion::GaussianLaw);
    let grid = series.grid();
    if grid.ndim() != 1 {
        return Err(VerifyError::Setup("Gaussian law check runs on one spatial axis".into()));
    }
    let c = grid.axes()[0].coord.index();
    let params = series.snapshots[0].params;
    let tau = spreading_time(setup.sigma0, &params);
    let horizon = spreading_times * tau;
    let t_last = series.last().t;
    out.require("horizon_covered", t_last / horizon, t_last >= horizon * (1.0 - 1e-9), "series reaches the horizon");

    let starts: Vec<V4> = (1..=100)
        .flat_map(|k| [k as f64 / 50.0, -(k as f64) / 50.0])
        .map(|s| {
            let mut x = [0.0; 4];
            x[c] = setup.center + s * setup.sigma0;
            x
        })
        .collect();
    let res = run_ensemble_from(series, &starts, cfg, &params, ext)?;
    let mut worst: f64 = 0.0;
    let mut halted = 0;
    for (start, path) in starts.iter().zip(&res.paths) {
        if path.positions.len() < res.times.len() {
            halted += 1;
        }
        let d0 = start[c] - setup.center;
        for (k, x) in path.positions.iter().enumerate() {
            let t = res.times[k];
            if t > horizon * (1.0 + 1e-9) {
                break;
            }
            let law = free_gaussian_width(setup.sigma0, t, &params) / setup.sigma0;
            let centre = setup.center + setup.p0 * t / params.m;
            worst = worst.max(((x[c] - centre) / d0 - law).abs() / law);
        }
    }
    out.require("halted", halted as f64, halted == 0, "= 0");
    out.require("max_relative_error", worst, worst <= tolerance, &format!("≤ {tolerance}"));
    out.metric("spreading_time", tau);
    Ok(out)
}

/// Equivariance statistics of a full ensemble. `fringe_l1` additionally
/// requires the histogram L1 distance bound.
pub fn born_rule(result: &EnsembleResult, min_particles: usize, ks_limit: f64, fringe_l1: Option<f64>) -> CheckOutcome {
    let mut out = CheckOutcome::new(Criterion::BornRule);
    let n = result.paths.len();
    out.require("particles", n as f64, n >= min_particles, &format!("≥ {min_particles}"));
    out.metric("exclusion_fraction", result.exclusion_fraction);
    match result.max_ks() {
        Some(ks) => out.require("max_ks", ks, ks <= ks_limit, &format!("≤ {ks_limit}")),
        None => out.fail("KS needs one spatial axis"),
    }
    if let Some(limit) = fringe_l1 {
        let last = result.stats.last().map(|s| s.l1).unwrap_or(f64::NAN);
        out.require("screen_l1", last, last <= limit, &format!("≤ {limit}"));
        let max = result.max_l1();
        out.require("max_l1", max, max <= limit, &format!("≤ {limit}"));
    }
    out
}

/// Negative control: every particle starts at `at`, so the ensemble cannot
/// follow `|Ψ|²` and the KS distance stays above one half.
pub fn point_mass_control(
    series: &WaveSeries,
    at: V4,
    cfg: &EnsembleConfig,
    ext: &ExternalFields,
) -> Result<CheckOutcome, VerifyError> {
    let mut out = CheckOutcome::new(Criterion::BornRule);
    let params = series.snapshots[0].params;
    let res = run_ensemble_from(series, &vec![at; crate::ensemble::MIN_VALID], cfg, &params, ext)?;
    let min_ks = res.stats.iter().filter_map(|s| s.ks).fold(f64::INFINITY, f64::min);
    out.require("control_min_ks", min_ks, min_ks > 0.5, "> 0.5");
    Ok(out)
}

/// Order inversions among completed 1D paths.
pub fn non_crossing(result: &EnsembleResult, grid: &GridSpec, min_paths: usize) -> Result<CheckOutcome, VerifyError> {
    let mut out = CheckOutcome::new(Criterion::NonCrossing);
    let valid = result.valid_paths().count();
    out.require("valid_paths", valid as f64, valid >= min_paths, &format!("≥ {min_paths}"));
    let n = non_crossing_check(result, grid)?;
    out.require("inversions", n as f64, n == 0, "= 0");
    out.metric("snapshots", result.times.len() as f64);
    Ok(out)
}

/// Particles released at rest at `starts` (offsets from `center`) move
/// under the quantum mass built from the solved `b` with `α` scaled by each
/// `ε`; the largest distance from the classical worldline must scale like
/// `ε` within `tolerance` (relative to the first `ε`).
pub fn classical_limit(
    series: &WaveSeries,
    ext: &ExternalFields,
    eps: &[f64],
    center: f64,
    starts: &[f64],
    tolerance: f64,
) -> Result<CheckOutcome, VerifyError> {
    let mut out = CheckOutcome::new(Criterion::ClassicalLimit);
    if eps.len() < 2 || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(VerifyError::Setup("need at least two positive scalings".into()));
    }
    let params = series.snapshots[0].params;
    let polar = spacetime_polar(series, DEFAULT_B_FLOOR_REL)?;
    let st = polar.grid.clone();
    let c = series.grid().axes()[0].coord.index();
    let h = series.grid().min_spacing();
    let t_end = series.last().t;
    let w = WeylStructure::flat_with_factor(&st, polar.b.clone())?;
    let classical = ClassicalMass { m: params.m, ext };

    let mut devs = Vec::with_capacity(eps.len());
    for (k, &e) in eps.iter().enumerate() {
        let scaled = ParticleParams { alpha: e * params.alpha, ..params };
        let mu = quantum_mass(&w, &scaled, ext)?;
        let mut dev: f64 = 0.0;
        for &s in starts {
            let mut x = [series.snapshots[0].t, 0.0, 0.0, 0.0];
            x[c] = center + s;
            let start = TrajectoryState::from_velocity(x, [0.0; 3], &ext.metric)?;
            let ds = step_for_spacing(h, &start.u);
            let q = integrate(start, &mu, ext, params.e, ds, t_end)?;
            let cl = integrate(start, &classical, ext, params.e, ds, t_end)?;
            if q.status != TrajectoryStatus::Completed || cl.status != TrajectoryStatus::Completed {
                out.fail(format!("trajectory from {} halted ({:?}, {:?}) at eps {e}", x[c], q.status, cl.status));
                continue;
            }
            for st in &q.states {
                if let Some(p) = cl.position_at(st.x[0]) {
                    dev = dev.max((st.x[c] - p[c]).abs());
                }
            }
        }
        out.metric(format!("eps{k}.value"), e);
        out.metric(format!("eps{k}.deviation"), dev);
        devs.push(dev / e);
    }
    for k in 1..devs.len() {
        let r = devs[k] / devs[0];
        out.require(format!("eps{k}.scaled_ratio"), r, (r - 1.0).abs() <= tolerance, &format!("within {tolerance} of 1"));
    }
    Ok(out)
}
