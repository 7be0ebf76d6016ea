//! Born-rule ensembles: particles sampled from `|Ψ₀|²` and carried by the
//! guidance field of a solved wave, compared against `|Ψ(t)|²`.

mod sample;
mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sample::{particle_rng, sample_initial, Sampler};
pub use stats::{count_crossings, empirical_histogram, ks_statistic, l1_distance, reference_histogram, GridCdf};

use crate::dynamics::{guiding_velocity, DynamicsError, ExternalFields, GuidanceMode, ParticleParams};
use crate::grid::{GridSpec, V4};
use crate::wave::{polar_decompose, WaveError, WaveField, WaveSeries, DEFAULT_B_FLOOR_REL};

/// Largest tolerated fraction of halted trajectories.
pub const MAX_EXCLUSION: f64 = 0.05;
/// Fewest valid trajectories for which statistics are reported.
pub const MIN_VALID: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("density vanishes everywhere")]
    ZeroDensity,
    #[error("invalid ensemble input: {0}")]
    Invalid(String),
    #[error("{fraction:.3} of trajectories halted, above the {limit} limit")]
    TooManyExcluded { fraction: f64, limit: f64 },
    #[error("only {valid} valid trajectories, need {MIN_VALID}")]
    TooFewValid { valid: usize },
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: usize,
    pub seed: u64,
    pub sampler: Sampler,
    /// Upper bound on the trajectory time step.
    pub dt: f64,
    /// Histogram bins per axis for the L1 statistic.
    pub bins: usize,
    pub b_floor_rel: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { n: 10_000, seed: 1, sampler: Sampler::InverseCdf, dt: 0.05, bins: 32, b_floor_rel: DEFAULT_B_FLOOR_REL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatus {
    Completed,
    /// Came within the node floor of `|Ψ|`.
    Node,
    ExitedDomain,
}

/// Positions of one particle at the snapshot times it reached.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticlePath {
    pub positions: Vec<V4>,
    pub status: PathStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotStats {
    pub t: f64,
    pub valid: usize,
    /// Only on one spatial axis.
    pub ks: Option<f64>,
    pub l1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleResult {
    pub config: EnsembleConfig,
    pub times: Vec<f64>,
    pub paths: Vec<ParticlePath>,
    pub exclusion_fraction: f64,
    pub stats: Vec<SnapshotStats>,
}

impl EnsembleResult {
    pub fn valid_paths(&self) -> impl Iterator<Item = &ParticlePath> {
        self.paths.iter().filter(|p| p.status == PathStatus::Completed)
    }

    /// Positions of completed paths at snapshot `k`.
    pub fn positions_at(&self, k: usize) -> Vec<V4> {
        self.valid_paths().map(|p| p.positions[k]).collect()
    }

    pub fn max_ks(&self) -> Option<f64> {
        self.stats.iter().filter_map(|s| s.ks).reduce(f64::max)
    }

    pub fn max_l1(&self) -> f64 {
        self.stats.iter().map(|s| s.l1).fold(0.0, f64::max)
    }
}

/// Nonrelativistic guidance velocities at every grid point of one snapshot.
struct VelocitySlice {
    v: Vec<[f64; 3]>,
    blocked: Vec<bool>,
}

impl VelocitySlice {
    fn new(field: &WaveField, params: &ParticleParams, ext: &ExternalFields, b_floor_rel: f64) -> Self {
        let polar = polar_decompose(field, b_floor_rel);
        let grid = &field.grid;
        let mut v = vec![[0.0; 3]; grid.len()];
        let mut blocked = vec![false; grid.len()];
        for i in 0..grid.len() {
            let mut x = grid.point(i);
            x[0] = field.t;
            match guiding_velocity(&polar, ext, params, &x, GuidanceMode::Nonrelativistic) {
                Ok(g) => v[i] = g.velocity,
                Err(_) => blocked[i] = true,
            }
        }
        Self { v, blocked }
    }

    fn at(&self, grid: &GridSpec, x: &V4) -> Result<[f64; 3], PathStatus> {
        let ws = grid.interpolation_weights(x).ok_or(PathStatus::ExitedDomain)?;
        let mut out = [0.0; 3];
        for (i, w) in ws {
            if w == 0.0 {
                continue;
            }
            if self.blocked[i] {
                return Err(PathStatus::Node);
            }
            for c in 0..3 {
                out[c] += w * self.v[i][c];
            }
        }
        Ok(out)
    }
}

struct Flow<'a> {
    grid: &'a GridSpec,
    slices: Vec<VelocitySlice>,
    times: Vec<f64>,
}

impl Flow<'_> {
    /// `dx/dt` in slot `k` (between snapshots `k` and `k + 1`), linear in time.
    fn velocity(&self, k: usize, x: &V4) -> Result<V4, PathStatus> {
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let f = ((x[0] - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let a = self.slices[k].at(self.grid, x)?;
        let b = self.slices[k + 1].at(self.grid, x)?;
        Ok([1.0, a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])])
    }

    fn rk4(&self, k: usize, x: &V4, h: f64) -> Result<V4, PathStatus> {
        let add = |a: &V4, s: f64, b: &V4| -> V4 { std::array::from_fn(|i| a[i] + s * b[i]) };
        let k1 = self.velocity(k, x)?;
        let k2 = self.velocity(k, &add(x, 0.5 * h, &k1))?;
        let k3 = self.velocity(k, &add(x, 0.5 * h, &k2))?;
        let k4 = self.velocity(k, &add(x, h, &k3))?;
        Ok(std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
    }

    fn path(&self, start: V4, dt: f64) -> ParticlePath {
        let mut x = start;
        x[0] = self.times[0];
        let mut positions = vec![x];
        for k in 0..self.times.len() - 1 {
            let span = self.times[k + 1] - self.times[k];
            let steps = (span / dt - 1e-9).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for s in 0..steps {
                match self.rk4(k, &x, h) {
                    Ok(next) => x = next,
                    Err(status) => return ParticlePath { positions, status },
                }
                // pin the clock to the step grid
                x[0] = self.times[k] + (s + 1) as f64 * h;
            }
            x[0] = self.times[k + 1];
            positions.push(x);
        }
        ParticlePath { positions, status: PathStatus::Completed }
    }
}

/// KS (one axis only) and L1 distance between positions and `|Ψ|²`.
pub fn equivariance_statistic(positions: &[V4], field: &WaveField, bins: usize) -> Result<(Option<f64>, f64), EnsembleError> {
    if positions.len() < MIN_VALID {
        return Err(EnsembleError::TooFewValid { valid: positions.len() });
    }
    let w = field.density();
    let ks = if field.grid.ndim() == 1 { Some(ks_statistic(&field.grid, &w, positions)?) } else { None };
    Ok((ks, l1_distance(&field.grid, &w, positions, bins)?))
}

/// Carry the given start positions through the guidance field of `series`.
///
/// Halted trajectories are excluded from statistics; more than
/// [`MAX_EXCLUSION`] of them is an error.
pub fn run_ensemble_from(
    series: &WaveSeries,
    initial: &[V4],
    cfg: &EnsembleConfig,
    params: &ParticleParams,
    ext: &ExternalFields,
) -> Result<EnsembleResult, EnsembleError> {
    if series.snapshots.len() < 2 {
        return Err(EnsembleError::Invalid("need at least two snapshots".into()));
    }
    if !(cfg.dt > 0.0) {
        return Err(EnsembleError::Invalid(format!("trajectory step must be positive, got {}", cfg.dt)));
    }
    let grid = series.grid();
    let slices: Vec<VelocitySlice> =
        series.snapshots.par_iter().map(|s| VelocitySlice::new(s, params, ext, cfg.b_floor_rel)).collect();
    let flow = Flow { grid, slices, times: series.times() };
    let paths: Vec<ParticlePath> = initial.par_iter().map(|x| flow.path(*x, cfg.dt)).collect();
    let halted = paths.iter().filter(|p| p.status != PathStatus::Completed).count();
    let exclusion_fraction = halted as f64 / paths.len().max(1) as f64;
    if exclusion_fraction > MAX_EXCLUSION {
        return Err(EnsembleError::TooManyExcluded { fraction: exclusion_fraction, limit: MAX_EXCLUSION });
    }
    let mut result = EnsembleResult { config: cfg.clone(), times: flow.times.clone(), paths, exclusion_fraction, stats: Vec::new() };
    for (k, snap) in series.snapshots.iter().enumerate() {
        let pos = result.positions_at(k);
        let (ks, l1) = equivariance_statistic(&pos, snap, cfg.bins)?;
        result.stats.push(SnapshotStats { t: snap.t, valid: pos.len(), ks, l1 });
    }
    Ok(result)
}

/// Sample `cfg.n` particles from `|Ψ₀|²` and run them through the series.
pub fn run_ensemble(
    series: &WaveSeries,
    cfg: &EnsembleConfig,
    params: &ParticleParams,
    ext: &ExternalFields,
) -> Result<EnsembleResult, EnsembleError> {
    let first = &series.snapshots[0];
    let initial = sample_initial(&first.grid, &first.density(), cfg.n, cfg.seed, cfg.sampler)?;
    run_ensemble_from(series, &initial, cfg, params, ext)
}

/// Order inversions among completed 1D paths.
pub fn non_crossing_check(result: &EnsembleResult, grid: &GridSpec) -> Result<usize, EnsembleError> {
    if grid.ndim() != 1 {
        return Err(EnsembleError::Invalid("non-crossing check is one-dimensional".into()));
    }
    let c = grid.axes()[0].coord.index();
    let paths: Vec<Vec<V4>> = result.valid_paths().map(|p| p.positions.clone()).collect();
    Ok(count_crossings(&paths, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, Coord};
    use crate::wave::{init, solve_schrodinger, Scheme, SolverKind};

    #[test]
    fn uniform_samples_stay_in_range() {
        let g = GridSpec::line(Coord::X, 0.0, 1.0, 11, Boundary::OneSided).unwrap();
        for seed in 0..20 {
            let xs = sample_initial(&g, &[1.0; 11], 4, seed, Sampler::InverseCdf).unwrap();
            assert_eq!(xs.len(), 4);
            assert!(xs.iter().all(|x| (0.0..=1.0).contains(&x[1])));
        }
    }

    #[test]
    fn point_mass_samples_one_cell() {
        let g = GridSpec::line(Coord::X, 0.0, 1.0, 11, Boundary::OneSided).unwrap();
        let mut w = vec![0.0; 11];
        w[4] = 3.0;
        for s in [Sampler::InverseCdf, Sampler::Rejection] {
            let xs = sample_initial(&g, &w, 200, 7, s).unwrap();
            assert!(xs.iter().all(|x| (x[1] - 0.4).abs() <= 0.05 + 1e-12));
        }
        assert_eq!(sample_initial(&g, &[0.0; 11], 3, 0, Sampler::InverseCdf), Err(EnsembleError::ZeroDensity));
    }

    #[test]
    fn plane_wave_ensemble_moves_rigidly() {
        let g = GridSpec::line(Coord::X, 0.0, 2.0 * std::f64::consts::PI, 128, Boundary::Periodic).unwrap();
        let p = ParticleParams::default();
        let psi = init::plane_wave(&g, [2.0, 0.0, 0.0], 0.0, &p, SolverKind::Schrodinger).unwrap();
        let series = solve_schrodinger(&psi, &ExternalFields::flat(), 1.0, 0.01, Scheme::SplitStep, 25).unwrap();
        let cfg = EnsembleConfig { n: 500, seed: 3, dt: 0.05, bins: 16, ..Default::default() };
        let r = run_ensemble(&series, &cfg, &p, &ExternalFields::flat()).unwrap();
        assert_eq!(r.exclusion_fraction, 0.0);
        for path in &r.paths {
            let d = path.positions.last().unwrap()[1] - path.positions[0][1];
            assert!((d - 2.0).abs() < 1e-10);
        }
        assert_eq!(non_crossing_check(&r, &g).unwrap(), 0);
    }

    #[test]
    fn crossing_detector_counts_swaps() {
        let a = vec![[0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]];
        let b = vec![[0.0, 0.5, 0.0, 0.0], [1.0, 0.7, 0.0, 0.0]];
        assert_eq!(count_crossings(&[a.clone(), b.clone()], 1), 1);
        let c = vec![[0.0, 0.6, 0.0, 0.0], [1.0, 1.5, 0.0, 0.0]];
        assert_eq!(count_crossings(&[a, c], 1), 0);
    }
}
