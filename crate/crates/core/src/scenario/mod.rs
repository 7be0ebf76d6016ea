//! Scenario files and the run pipeline.
//!
//! A scenario is a flat `key = value` file with optional `[section]`
//! headers; `[wave]` followed by `sigma0 = 2` is the same as
//! `wave.sigma0 = 2`. Running one solves the wave equation, decomposes the
//! result, evaluates residuals, moves particles and writes everything with
//! a hashed manifest.

mod config;
mod plot;
mod run;

use std::path::PathBuf;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use config::{parse_scenario, scenario_to_text, ConfigErrors, ConfigIssue};
pub use plot::{convergence_table, emit_plot_data, PlotError, PlotKind};
pub use run::{
    residual_series, run, run_ks_limit, EnsembleSummary, OutputFile, RunError, RunManifest, RunOptions, RunSummary, Stage, TrajectorySummary, RUN_NORM_LIMIT,
    STRONG_QUANTUM_FLAG,
};

use crate::dynamics::{ExternalFields, ParticleParams, ScalarSource, VectorSource};
use crate::ensemble::{EnsembleConfig, Sampler, MIN_VALID};
use crate::geometry::ScalarJet;
use crate::grid::{Axis, Boundary, GridSpec, V4};
use crate::verify::Criterion;
use crate::wave::{init, positive_frequency_rate, read_snapshot_csv, SolverKind, WaveError, WaveField};

/// Ensemble paths written to `trajectories.csv` unless set otherwise.
pub const DEFAULT_RECORD: usize = 200;
/// Particles integrated with the full equations of motion.
pub const DEFAULT_TRAJECTORIES: usize = 8;
/// Residual norms count points with `b ≥ core_rel · max b`.
pub const DEFAULT_CORE_REL: f64 = 1e-3;
/// Grid points required across one initial width.
pub const MIN_POINTS_PER_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitSpec {
    PlaneWave { p: [f64; 3] },
    Gaussian { x0: [f64; 3], sigma0: f64, p0: [f64; 3] },
    OscillatorEigenstate { n: usize, omega: f64 },
    DoubleSlit { separation: f64, slit_sigma: f64, p0: f64 },
    /// Snapshot CSV as written by a previous run.
    Custom { file: PathBuf },
}

/// Scalar potential energy, applied on every spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PotentialSpec {
    None,
    /// `½ m ω² Σ (x_d - center)²`.
    Harmonic { omega: f64, center: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeSpec {
    CrankNicolson,
    SplitStep,
    Leapfrog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub kind: SolverKind,
    pub scheme: SchemeSpec,
    pub dt: f64,
    pub t_end: f64,
    pub snapshot_every: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { kind: SolverKind::Schrodinger, scheme: SchemeSpec::CrankNicolson, dt: 0.01, t_end: 1.0, snapshot_every: 10 }
    }
}

impl SolverSpec {
    pub fn default_scheme(kind: SolverKind) -> SchemeSpec {
        match kind {
            SolverKind::Schrodinger => SchemeSpec::CrankNicolson,
            SolverKind::KleinGordon => SchemeSpec::Leapfrog,
        }
    }

    /// Whole steps taken to reach `t_end`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// Acceptance check to run after the pipeline, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSpec {
    pub criterion: Criterion,
    /// Halvings of `(h, Δt)` in a refinement series.
    pub refine: usize,
    /// Overrides the criterion's default tolerance.
    pub tolerance: Option<f64>,
    /// Scalings of `α` in the classical-limit check.
    pub eps: Vec<f64>,
    /// Start offsets from the packet centre in the classical-limit check;
    /// empty means `σ₀/2, σ₀, 2σ₀`.
    pub starts: Vec<f64>,
    pub spreading_times: f64,
    /// Offset of the point-mass control ensemble from the packet centre.
    pub control_offset: Option<f64>,
    pub ks_limit: f64,
    /// Histogram L1 bound for fringe patterns.
    pub l1_limit: Option<f64>,
    pub min_particles: usize,
    pub min_steps: usize,
}

impl CheckSpec {
    pub fn new(criterion: Criterion) -> Self {
        Self {
            criterion,
            refine: 1,
            tolerance: None,
            eps: vec![1.0, 0.5, 0.25],
            starts: Vec::new(),
            spreading_times: 2.0,
            control_offset: None,
            ks_limit: 0.03,
            l1_limit: None,
            min_particles: if criterion == Criterion::NonCrossing { 1000 } else { 10_000 },
            min_steps: 10_000,
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance.unwrap_or(match self.criterion {
            Criterion::NormConservation => 1e-8,
            Criterion::PlaneWave => 1e-10,
            Criterion::GaussianLaw => 1e-2,
            Criterion::ClassicalLimit => 0.2,
            _ => 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Spatial axes; time comes from the solver section.
    pub axes: Vec<Axis>,
    pub particle: ParticleParams,
    pub init: Option<InitSpec>,
    pub potential: PotentialSpec,
    /// Constant 4-potential `A_l`.
    pub gauge: Option<V4>,
    pub solver: SolverSpec,
    /// `n = 0` skips the ensemble.
    pub ensemble: EnsembleConfig,
    /// Ensemble paths written out in full.
    pub record: usize,
    pub trajectories: usize,
    pub core_rel: f64,
    pub check: Option<CheckSpec>,
}

impl Scenario {
    pub fn grid(&self) -> Result<GridSpec, crate::grid::GridError> {
        GridSpec::new(self.axes.clone())
    }

    /// Geometric checks need only the grid.
    pub fn needs_wave(&self) -> bool {
        !self.check.as_ref().is_some_and(|c| c.criterion.is_geometric())
    }

    pub fn external_fields(&self) -> ExternalFields {
        let mut ext = ExternalFields::flat();
        if let PotentialSpec::Harmonic { omega, center } = self.potential {
            let k = self.particle.m * omega * omega;
            let dims: Vec<usize> = self.axes.iter().map(|a| a.coord.index()).collect();
            ext = ext.with_potential(ScalarSource::Analytic(Arc::new(move |x: &V4| {
                let mut v = 0.0;
                let mut grad = [0.0; 4];
                let mut hess = [[0.0; 4]; 4];
                for &d in &dims {
                    let dx = x[d] - center;
                    v += 0.5 * k * dx * dx;
                    grad[d] = k * dx;
                    hess[d][d] = k;
                }
                ScalarJet::new(v, grad, hess)
            })));
        }
        if let Some(a) = self.gauge {
            ext = ext.with_vector_potential(VectorSource::constant(a));
        }
        ext
    }

    /// Initial field `Ψ₀` and, for Klein-Gordon, `∂Ψ/∂t` at `t = 0`.
    pub fn initial_field(&self, grid: &GridSpec) -> Result<(WaveField, Option<Vec<Complex64>>), WaveError> {
        let kind = self.solver.kind;
        let p = &self.particle;
        let psi = match self.init.as_ref().ok_or(WaveError::Unsupported("scenario has no wave section".into()))? {
            InitSpec::PlaneWave { p: k } => init::plane_wave(grid, *k, 0.0, p, kind)?,
            InitSpec::Gaussian { x0, sigma0, p0 } => init::gaussian(grid, *x0, *sigma0, *p0, p, kind)?,
            InitSpec::OscillatorEigenstate { n, omega } => {
                let f = init::oscillator_eigenstate(grid, *n, *omega, p)?;
                WaveField { kind, ..f }
            }
            InitSpec::DoubleSlit { separation, slit_sigma, p0 } => {
                init::double_slit(grid, *separation, *slit_sigma, *p0, p, kind)?
            }
            InitSpec::Custom { file } => {
                let f = std::fs::File::open(file)
                    .and_then(read_snapshot_csv)
                    .map_err(|e| WaveError::Unsupported(format!("cannot read {}: {e}", file.display())))?;
                if &f.grid != grid {
                    return Err(WaveError::Unsupported(format!("{} is on a different grid", file.display())));
                }
                WaveField::new(grid, f.values, 0.0, kind, *p)?.normalized()?
            }
        };
        let dot = (kind == SolverKind::KleinGordon).then(|| positive_frequency_rate(&psi));
        Ok((psi, dot))
    }

    /// Widths the grid must resolve.
    fn resolved_widths(&self) -> Vec<(&'static str, f64)> {
        match &self.init {
            Some(InitSpec::Gaussian { sigma0, .. }) => vec![("wave.sigma0", *sigma0)],
            Some(InitSpec::DoubleSlit { slit_sigma, .. }) => vec![("wave.slit_sigma", *slit_sigma)],
            Some(InitSpec::OscillatorEigenstate { omega, .. }) => {
                vec![("wave.omega", (self.particle.hbar / (self.particle.m * omega)).sqrt())]
            }
            _ => Vec::new(),
        }
    }

    /// Largest momentum the initial field carries appreciably: the mean
    /// momentum plus three momentum widths.
    fn momentum_reach(&self) -> f64 {
        let hbar = self.particle.hbar;
        let norm = |p: &[f64; 3]| p.iter().map(|c| c * c).sum::<f64>().sqrt();
        match &self.init {
            Some(InitSpec::PlaneWave { p }) => norm(p),
            Some(InitSpec::Gaussian { sigma0, p0, .. }) => norm(p0) + 1.5 * hbar / sigma0,
            Some(InitSpec::DoubleSlit { slit_sigma, p0, .. }) => p0.abs() + 1.5 * hbar / slit_sigma,
            Some(InitSpec::OscillatorEigenstate { n, omega }) => (self.particle.m * hbar * omega * (2 * n + 1) as f64).sqrt() * 3.0,
            _ => 0.0,
        }
    }

    /// Problems with an otherwise well-formed scenario.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut bad = |key: &str, msg: String| out.push(ConfigIssue { line: None, key: Some(key.into()), message: msg });
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            bad("name", format!("name must be non-empty letters, digits, `_` or `-`, got `{}`", self.name));
        }
        let grid = match self.grid() {
            Ok(g) => Some(g),
            Err(e) => {
                if !self.axes.is_empty() {
                    bad("grid", e.to_string());
                }
                None
            }
        };
        if let Err(e) = self.particle.validated() {
            bad("particle", e.to_string());
        }
        let s = &self.solver;
        if let Some(c) = &self.check {
            if c.refine == 0 {
                bad("check.refine", "need at least one refinement".into());
            }
            if c.criterion.is_geometric() {
                if let Some(g) = &grid {
                    if g.ndim() != 1 {
                        bad("grid", "geometric checks take one template axis".into());
                    }
                }
                return out;
            }
        }
        if !(s.dt > 0.0) || !(s.t_end > 0.0) {
            bad("solver.dt", format!("need dt > 0 and t_end > 0, got dt = {}, t_end = {}", s.dt, s.t_end));
            return out;
        }
        if s.snapshot_every == 0 {
            bad("solver.snapshot_every", "must be at least 1".into());
            return out;
        }
        let steps = s.steps();
        if !steps.is_multiple_of(s.snapshot_every) {
            bad("solver.snapshot_every", format!("{steps} steps do not split into whole snapshot intervals of {}", s.snapshot_every));
        } else if steps / s.snapshot_every < 4 {
            bad("solver.snapshot_every", format!("need at least 5 snapshots in [0, t_end], got {}", steps / s.snapshot_every + 1));
        }
        match (s.kind, s.scheme) {
            (SolverKind::Schrodinger, SchemeSpec::Leapfrog) => bad("solver.scheme", "leapfrog is the Klein-Gordon scheme".into()),
            (SolverKind::KleinGordon, SchemeSpec::CrankNicolson | SchemeSpec::SplitStep) => {
                bad("solver.scheme", "Klein-Gordon runs with leapfrog".into())
            }
            _ => {}
        }
        if let Some(g) = &grid {
            if s.scheme == SchemeSpec::CrankNicolson && g.ndim() != 1 {
                bad("solver.scheme", "crank_nicolson is one-dimensional".into());
            }
            if s.scheme == SchemeSpec::SplitStep && g.axes().iter().any(|a| a.boundary != Boundary::Periodic) {
                bad("solver.scheme", "split_step needs periodic axes".into());
            }
            for (key, width) in self.resolved_widths() {
                let h = g.axes().iter().map(|a| a.spacing()).fold(0.0, f64::max);
                if width > 0.0 && width < MIN_POINTS_PER_WIDTH * h {
                    bad(key, format!("width {width} spans fewer than {MIN_POINTS_PER_WIDTH} grid spacings of {h}"));
                }
            }
            if s.kind == SolverKind::KleinGordon {
                let interval = s.dt * s.snapshot_every as f64;
                let pmax = self.momentum_reach();
                let e = (self.particle.m * self.particle.m + pmax * pmax).sqrt();
                if e * interval / self.particle.hbar >= std::f64::consts::PI {
                    bad("solver.snapshot_every", "snapshots too sparse to follow the rest-mass phase".into());
                }
            }
        }
        if s.kind == SolverKind::Schrodinger && self.gauge.is_some_and(|a| a[1..].iter().any(|c| *c != 0.0)) {
            bad("gauge.a", "the Schrödinger solvers take a scalar potential only".into());
        }
        match &self.init {
            None => bad("wave.init", "a wave section is required unless the check is geometric".into()),
            Some(InitSpec::Gaussian { sigma0, .. }) if !(*sigma0 > 0.0) => bad("wave.sigma0", "must be positive".into()),
            Some(InitSpec::DoubleSlit { slit_sigma, .. }) if !(*slit_sigma > 0.0) => bad("wave.slit_sigma", "must be positive".into()),
            Some(InitSpec::OscillatorEigenstate { omega, .. }) if !(*omega > 0.0) => bad("wave.omega", "must be positive".into()),
            _ => {}
        }
        if let PotentialSpec::Harmonic { omega, .. } = self.potential {
            if !(omega > 0.0) {
                bad("potential.omega", "must be positive".into());
            }
        }
        let e = &self.ensemble;
        if e.n > 0 {
            if e.n < MIN_VALID {
                bad("ensemble.n", format!("need 0 or at least {MIN_VALID} particles"));
            }
            if !(e.dt > 0.0) {
                bad("ensemble.dt", "must be positive".into());
            }
            if e.bins == 0 {
                bad("ensemble.bins", "must be positive".into());
            }
            if !(e.b_floor_rel >= 0.0 && e.b_floor_rel < 1.0) {
                bad("ensemble.b_floor_rel", "must lie in [0, 1)".into());
            }
            if e.sampler == Sampler::InverseCdf && self.axes.len() != 1 {
                bad("ensemble.sampler", "inverse_cdf needs one spatial axis".into());
            }
        }
        if !(self.core_rel >= 0.0 && self.core_rel < 1.0) {
            bad("residuals.core_rel", "must lie in [0, 1)".into());
        }
        if let Some(c) = &self.check {
            let gaussian = matches!(self.init, Some(InitSpec::Gaussian { .. }));
            let needs = |ok: bool, what: &str| (!ok).then(|| format!("{} needs {what}", c.criterion));
            let problem = match c.criterion {
                Criterion::Equivalence => needs(s.kind == SolverKind::Schrodinger, "the Schrödinger solver"),
                Criterion::NormConservation => needs(s.kind == SolverKind::Schrodinger, "the Schrödinger solver"),
                Criterion::PlaneWave => needs(matches!(self.init, Some(InitSpec::PlaneWave { .. })) && self.axes.len() == 1, "a 1D plane_wave init"),
                Criterion::GaussianLaw | Criterion::ClassicalLimit => {
                    needs(gaussian && self.axes.len() == 1 && self.potential == PotentialSpec::None, "a free 1D gaussian init")
                }
                Criterion::BornRule | Criterion::NonCrossing => needs(e.n > 0 && self.axes.len() == 1, "a 1D ensemble"),
                _ => None,
            };
            if let Some(p) = problem {
                bad("check.criterion", p);
            }
            if c.control_offset.is_some() && !gaussian {
                bad("check.control_offset", "the point-mass control needs a gaussian init".into());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> String {
        "name = t\ngrid.x = -20 20 256 one_sided\nwave.init = gaussian\nwave.sigma0 = 2\nsolver.dt = 0.01\nsolver.t_end = 1\nsolver.snapshot_every = 10\n".into()
    }

    #[test]
    fn validation_catches_unresolved_width_and_bad_schedule() {
        assert!(parse_scenario(&base(), true).is_ok());
        let narrow = base().replace("sigma0 = 2", "sigma0 = 0.5");
        let err = parse_scenario(&narrow, true).unwrap_err();
        assert!(err.0.iter().any(|i| i.key.as_deref() == Some("wave.sigma0") && i.line == Some(4)), "{err}");
        let sparse = base().replace("snapshot_every = 10", "snapshot_every = 30");
        assert!(parse_scenario(&sparse, true).is_err());
    }

    #[test]
    fn wave_section_optional_only_for_geometric_checks() {
        let geo = "name = g\ngrid.x = 0 6 32 periodic\ncheck.criterion = k_field\n";
        assert!(parse_scenario(geo, true).unwrap().init.is_none());
        let err = parse_scenario(&geo.replace("k_field", "born_rule"), true).unwrap_err();
        assert!(err.0.iter().any(|i| i.key.as_deref() == Some("wave.init")), "{err}");
    }

    #[test]
    fn harmonic_potential_is_quadratic() {
        let s = parse_scenario(&(base() + "potential.kind = harmonic\npotential.omega = 2\n"), true).unwrap();
        let ext = s.external_fields();
        let c = ext.coupling(1.0, &[0.0, 1.5, 0.0, 0.0]).unwrap();
        assert!((c.k[0] - 0.5 * 4.0 * 2.25).abs() < 1e-14);
        assert!((c.dk[0][1] - 4.0 * 1.5).abs() < 1e-14);
    }
}
