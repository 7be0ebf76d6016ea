use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{norm_sq, step_plan, SolverDiagnostics, SolverKind, WaveError, WaveField, WaveSeries};
use crate::dynamics::ExternalFields;
use crate::grid::{Boundary, GridSpec};

/// Drift of `‖ψ‖²` in one step above which the run is declared unstable.
const STEP_DRIFT_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Implicit midpoint in time, three-point Laplacian; 1D only.
    CrankNicolson,
    /// Strang splitting with FFT kinetic steps; periodic 1D/2D.
    SplitStep,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::CrankNicolson => "crank_nicolson",
            Scheme::SplitStep => "split_step",
        }
    }
}

/// Factored tridiagonal system with constant off-diagonals.
struct Thomas {
    off: Complex64,
    cprime: Vec<Complex64>,
    denom: Vec<Complex64>,
}

impl Thomas {
    fn new(diag: &[Complex64], off: Complex64) -> Self {
        let n = diag.len();
        let mut cprime = vec![Complex64::new(0.0, 0.0); n];
        let mut denom = vec![Complex64::new(0.0, 0.0); n];
        denom[0] = diag[0];
        cprime[0] = off / denom[0];
        for i in 1..n {
            denom[i] = diag[i] - off * cprime[i - 1];
            cprime[i] = off / denom[i];
        }
        Self { off, cprime, denom }
    }

    fn solve(&self, rhs: &mut [Complex64]) {
        let n = rhs.len();
        rhs[0] /= self.denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.off * rhs[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            let next = rhs[i + 1];
            rhs[i] -= self.cprime[i] * next;
        }
    }
}

/// Cyclic tridiagonal solve by Sherman-Morrison on top of [`Thomas`].
struct Cyclic {
    inner: Thomas,
    z: Vec<Complex64>,
    alpha: Complex64,
    gamma: Complex64,
    vz: Complex64,
}

impl Cyclic {
    fn new(diag: &[Complex64], off: Complex64) -> Self {
        let n = diag.len();
        let (alpha, beta) = (off, off);
        let gamma = -diag[0];
        let mut d = diag.to_vec();
        d[0] -= gamma;
        d[n - 1] -= alpha * beta / gamma;
        let inner = Thomas::new(&d, off);
        let mut z = vec![Complex64::new(0.0, 0.0); n];
        z[0] = gamma;
        z[n - 1] = beta;
        inner.solve(&mut z);
        let vz = z[0] + alpha / gamma * z[n - 1];
        Self { inner, z, alpha, gamma, vz }
    }

    fn solve(&self, rhs: &mut [Complex64]) {
        let n = rhs.len();
        self.inner.solve(rhs);
        let vy = rhs[0] + self.alpha / self.gamma * rhs[n - 1];
        let f = vy / (Complex64::new(1.0, 0.0) + self.vz);
        for (r, z) in rhs.iter_mut().zip(&self.z) {
            *r -= f * z;
        }
    }
}

enum Linear {
    Open(Thomas),
    Ring(Cyclic),
}

struct CrankNicolson {
    periodic: bool,
    solver: Linear,
    off: Complex64,
    diag_rhs: Vec<Complex64>,
}

impl CrankNicolson {
    fn new(grid: &GridSpec, v: &[f64], m: f64, hbar: f64, dt: f64) -> Self {
        let ax = &grid.axes()[0];
        let h = ax.spacing();
        let kin = hbar * hbar / (2.0 * m * h * h);
        let f = Complex64::new(0.0, dt / (2.0 * hbar));
        // A = 1 + i dt/2ħ H,  B = 1 - i dt/2ħ H,  H = kin (2δ - shift) + V
        let diag: Vec<Complex64> = v.iter().map(|&vi| 1.0 + f * (2.0 * kin + vi)).collect();
        let diag_rhs = v.iter().map(|&vi| 1.0 - f * (2.0 * kin + vi)).collect();
        let off = -f * kin;
        let periodic = ax.boundary == Boundary::Periodic;
        let solver = if periodic { Linear::Ring(Cyclic::new(&diag, off)) } else { Linear::Open(Thomas::new(&diag, off)) };
        Self { periodic, solver, off, diag_rhs }
    }

    fn step(&self, psi: &mut [Complex64]) {
        let n = psi.len();
        let zero = Complex64::new(0.0, 0.0);
        let at = |i: isize| -> Complex64 {
            if i < 0 || i >= n as isize {
                if self.periodic {
                    psi[i.rem_euclid(n as isize) as usize]
                } else {
                    zero
                }
            } else {
                psi[i as usize]
            }
        };
        // B ψ, whose off-diagonal is minus that of A
        let mut rhs: Vec<Complex64> = (0..n)
            .map(|i| self.diag_rhs[i] * psi[i] - self.off * (at(i as isize - 1) + at(i as isize + 1)))
            .collect();
        match &self.solver {
            Linear::Open(t) => t.solve(&mut rhs),
            Linear::Ring(c) => c.solve(&mut rhs),
        }
        psi.copy_from_slice(&rhs);
    }
}

struct SplitStep {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    kinetic: Vec<Complex64>,
    half_potential: Vec<Complex64>,
}

fn wavenumbers(n: usize, h: f64) -> Vec<f64> {
    let l = n as f64 * h;
    (0..n)
        .map(|j| {
            let j = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            2.0 * std::f64::consts::PI * j / l
        })
        .collect()
}

impl SplitStep {
    fn new(grid: &GridSpec, v: &[f64], m: f64, hbar: f64, dt: f64) -> Self {
        let shape = grid.shape();
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let ks: Vec<Vec<f64>> = grid.axes().iter().map(|a| wavenumbers(a.points, a.spacing())).collect();
        let kinetic = (0..grid.len())
            .map(|i| {
                let mi = grid.multi_index(i);
                let k2: f64 = mi.iter().enumerate().map(|(a, &j)| ks[a][j] * ks[a][j]).sum();
                Complex64::from_polar(1.0, -hbar * k2 * dt / (2.0 * m))
            })
            .collect();
        let half_potential = v.iter().map(|&vi| Complex64::from_polar(1.0, -vi * dt / (2.0 * hbar))).collect();
        Self { shape, forward, inverse, kinetic, half_potential }
    }

    fn transform(&self, psi: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        let nd = self.shape.len();
        let strides: Vec<usize> = (0..nd).map(|a| self.shape[a + 1..].iter().product()).collect();
        for a in 0..nd {
            let n = self.shape[a];
            let s = strides[a];
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            for start in 0..psi.len() {
                if !(start / s).is_multiple_of(n) {
                    continue;
                }
                for j in 0..n {
                    line[j] = psi[start + j * s];
                }
                plans[a].process(&mut line);
                for j in 0..n {
                    psi[start + j * s] = line[j];
                }
            }
        }
    }

    fn step(&self, psi: &mut [Complex64]) {
        let n = psi.len() as f64;
        psi.iter_mut().zip(&self.half_potential).for_each(|(p, v)| *p *= v);
        self.transform(psi, &self.forward);
        psi.iter_mut().zip(&self.kinetic).for_each(|(p, k)| *p *= k);
        self.transform(psi, &self.inverse);
        psi.iter_mut().zip(&self.half_potential).for_each(|(p, v)| *p *= v / n);
    }
}

/// Evolve `iħ ∂ψ/∂t = (-ħ²/2m ∇² + V) ψ` from `psi0.t` over `t_end`.
///
/// `V` is the potential energy from `ext` plus `e A_0`; spatial vector
/// potentials are rejected. A snapshot is kept every `snapshot_every` steps
/// and at the end. Each step checks that `‖ψ‖²` moved by at most `1e-10`.
pub fn solve_schrodinger(
    psi0: &WaveField,
    ext: &ExternalFields,
    t_end: f64,
    dt: f64,
    scheme: Scheme,
    snapshot_every: usize,
) -> Result<WaveSeries, WaveError> {
    let grid = &psi0.grid;
    let params = psi0.params;
    let coupling = ext.coupling_on(params.e, grid);
    if coupling.iter().any(|c| c[1] != 0.0 || c[2] != 0.0 || c[3] != 0.0) {
        return Err(WaveError::Unsupported("the Schrödinger solvers take a scalar potential only".into()));
    }
    let v: Vec<f64> = coupling.iter().map(|c| c[0]).collect();
    let (steps, dt) = step_plan(t_end, dt)?;
    let every = snapshot_every.max(1);

    enum Stepper {
        Cn(CrankNicolson),
        Split(SplitStep),
    }
    let stepper = match scheme {
        Scheme::CrankNicolson => {
            if grid.ndim() != 1 {
                return Err(WaveError::Unsupported("Crank-Nicolson is implemented for one spatial axis".into()));
            }
            Stepper::Cn(CrankNicolson::new(grid, &v, params.m, params.hbar, dt))
        }
        Scheme::SplitStep => {
            if grid.ndim() > 2 || grid.axes().iter().any(|a| a.boundary != Boundary::Periodic) {
                return Err(WaveError::Unsupported("split-step needs periodic axes in one or two dimensions".into()));
            }
            Stepper::Split(SplitStep::new(grid, &v, params.m, params.hbar, dt))
        }
    };

    let mut psi = psi0.values.clone();
    let n0 = norm_sq(grid, &psi);
    let mut prev = n0;
    let mut diag = SolverDiagnostics { scheme: scheme.name().to_string(), ..Default::default() };
    let mut snaps = vec![WaveField { kind: SolverKind::Schrodinger, ..psi0.clone() }];
    for n in 1..=steps {
        match &stepper {
            Stepper::Cn(s) => s.step(&mut psi),
            Stepper::Split(s) => s.step(&mut psi),
        }
        let t = psi0.t + n as f64 * dt;
        let cur = norm_sq(grid, &psi);
        if !cur.is_finite() {
            return Err(WaveError::NotFinite { t });
        }
        let drift = (cur - prev).abs();
        diag.max_step_norm_drift = diag.max_step_norm_drift.max(drift);
        if drift > STEP_DRIFT_LIMIT {
            return Err(WaveError::Unstable { scheme: scheme.name().to_string(), dt, drift });
        }
        prev = cur;
        if n % every == 0 || n == steps {
            snaps.push(WaveField { grid: grid.clone(), values: psi.clone(), t, kind: SolverKind::Schrodinger, params });
        }
    }
    diag.total_norm_drift = (prev - n0).abs();
    Ok(WaveSeries { snapshots: snaps, psi_dot: Vec::new(), dt, steps, diagnostics: diag })
}
