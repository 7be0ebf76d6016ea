//! Wave equation solvers, polar decomposition and the real equation system.
//!
//! The Schrödinger solvers handle the nonrelativistic limit on spatial
//! grids; the Klein-Gordon solver evolves the minimally coupled relativistic
//! equation. Both hand their snapshots to [`polar_decompose`], from which the
//! scale factor `b = |Ψ|` and action `S = ħ arg Ψ` feed the residual checks.

mod density;
pub mod init;
mod io;
mod klein_gordon;
mod polar;
mod residuals;
mod schrodinger;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use density::{densities, DensitySet};
pub use io::{read_snapshot_csv, write_snapshot_csv, ResidualReport};
pub use klein_gordon::{kg_energy, positive_frequency_rate, solve_klein_gordon, KgOptions};
pub use polar::{polar_compose, polar_decompose, spacetime_polar, PolarForm, DEFAULT_B_FLOOR_REL, NO_REGION};
pub use residuals::{
    continuity_residual, k_field_residual, real_system_residuals, KFieldResidual, RealResiduals, ResidualMode,
    ResidualNorms,
};
pub use schrodinger::{solve_schrodinger, Scheme};

use crate::dynamics::{DynamicsError, ParticleParams};
use crate::geometry::GeometryError;
use crate::grid::{GridError, GridSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("unsupported setup: {0}")]
    Unsupported(String),
    #[error("{scheme} became unstable with dt = {dt}: norm drift {drift:e} in one step")]
    Unstable { scheme: String, dt: f64, drift: f64 },
    #[error("time step {dt} exceeds the stability limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("field has zero norm")]
    ZeroNorm,
    #[error("non-finite value at t = {t}")]
    NotFinite { t: f64 },
    #[error("invalid time stepping: {0}")]
    Stepping(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Schrodinger,
    KleinGordon,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Schrodinger => "schrodinger",
            SolverKind::KleinGordon => "klein_gordon",
        }
    }
}

/// Complex field on a spatial grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    pub grid: GridSpec,
    pub values: Vec<Complex64>,
    pub t: f64,
    pub kind: SolverKind,
    pub params: ParticleParams,
}

impl WaveField {
    pub fn new(grid: &GridSpec, values: Vec<Complex64>, t: f64, kind: SolverKind, params: ParticleParams) -> Result<Self, WaveError> {
        if grid.has_time() {
            return Err(WaveError::Unsupported("wave fields live on spatial grids".into()));
        }
        grid.check_len(values.len())?;
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(WaveError::NotFinite { t });
        }
        Ok(Self { grid: grid.clone(), values, t, kind, params })
    }

    /// `Σ |ψ|² dV`.
    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.grid, &self.values)
    }

    /// Rescale so that `Σ |ψ|² dV = 1`.
    pub fn normalized(mut self) -> Result<Self, WaveError> {
        let n = self.norm_sq();
        if !(n > 0.0) {
            return Err(WaveError::ZeroNorm);
        }
        let s = 1.0 / n.sqrt();
        self.values.iter_mut().for_each(|v| *v *= s);
        Ok(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// `|ψ|²` at every point.
    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }
}

pub(crate) fn norm_sq(grid: &GridSpec, v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.cell_volume()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub scheme: String,
    /// Largest single-step change of `‖ψ‖²` (Schrödinger).
    pub max_step_norm_drift: f64,
    /// `|‖ψ(t_end)‖² - ‖ψ(0)‖²|` (Schrödinger).
    pub total_norm_drift: f64,
    /// Relative drift of the discrete energy (Klein-Gordon).
    pub energy_drift: Option<f64>,
    pub warnings: Vec<String>,
}

/// Snapshots of an evolution plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct WaveSeries {
    pub snapshots: Vec<WaveField>,
    /// `∂Ψ/∂t` at each snapshot (Klein-Gordon only).
    pub psi_dot: Vec<Vec<Complex64>>,
    pub dt: f64,
    pub steps: usize,
    pub diagnostics: SolverDiagnostics,
}

impl WaveSeries {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn grid(&self) -> &GridSpec {
        &self.snapshots[0].grid
    }

    pub fn last(&self) -> &WaveField {
        self.snapshots.last().expect("series is never empty")
    }
}

/// Split `[0, t_end]` into whole steps no longer than `dt`.
pub(crate) fn step_plan(t_end: f64, dt: f64) -> Result<(usize, f64), WaveError> {
    if !(dt > 0.0) || !(t_end >= 0.0) || !dt.is_finite() || !t_end.is_finite() {
        return Err(WaveError::Stepping(format!("need dt > 0 and t_end >= 0, got dt = {dt}, t_end = {t_end}")));
    }
    let n = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    if n == 0 {
        return Ok((0, dt));
    }
    Ok((n, t_end / n as f64))
}
