//! Initial wave functions.
//!
//! Gaussians use the convention `|ψ|² ∝ exp(-(x - x0)² / 2σ²)`, so `σ` is the
//! standard deviation of the position density.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{SolverKind, WaveError, WaveField};
use crate::dynamics::ParticleParams;
use crate::grid::GridSpec;

fn spatial(grid: &GridSpec, i: usize) -> [f64; 3] {
    let p = grid.point(i);
    [p[1], p[2], p[3]]
}

fn resolved(grid: &GridSpec) -> [bool; 3] {
    let mut out = [false; 3];
    for (_, a) in grid.spatial_axes() {
        out[a.coord.index() - 1] = true;
    }
    out
}

/// Energy of a free plane wave with momentum `p`.
pub fn plane_wave_energy(p: [f64; 3], params: &ParticleParams, kind: SolverKind) -> f64 {
    let p2: f64 = p.iter().map(|c| c * c).sum();
    match kind {
        SolverKind::Schrodinger => p2 / (2.0 * params.m),
        SolverKind::KleinGordon => (params.m * params.m + p2).sqrt(),
    }
}

/// Normalized plane wave `exp(i (p·x - E t) / ħ)` at time `t`.
pub fn plane_wave(grid: &GridSpec, p: [f64; 3], t: f64, params: &ParticleParams, kind: SolverKind) -> Result<WaveField, WaveError> {
    let e = plane_wave_energy(p, params, kind);
    let vals = (0..grid.len())
        .map(|i| {
            let x = spatial(grid, i);
            let phase = (p[0] * x[0] + p[1] * x[1] + p[2] * x[2] - e * t) / params.hbar;
            Complex64::from_polar(1.0, phase)
        })
        .collect();
    WaveField::new(grid, vals, t, kind, *params)?.normalized()
}

/// Product Gaussian over the resolved spatial axes.
pub fn gaussian(
    grid: &GridSpec,
    x0: [f64; 3],
    sigma0: f64,
    p0: [f64; 3],
    params: &ParticleParams,
    kind: SolverKind,
) -> Result<WaveField, WaveError> {
    if !(sigma0 > 0.0) {
        return Err(WaveError::Unsupported(format!("gaussian width must be positive, got {sigma0}")));
    }
    let on = resolved(grid);
    let vals = (0..grid.len())
        .map(|i| {
            let x = spatial(grid, i);
            let mut z = Complex64::new(0.0, 0.0);
            for d in 0..3 {
                if on[d] {
                    let dx = x[d] - x0[d];
                    z += Complex64::new(-dx * dx / (4.0 * sigma0 * sigma0), p0[d] * x[d] / params.hbar);
                }
            }
            z.exp()
        })
        .collect();
    WaveField::new(grid, vals, 0.0, kind, *params)?.normalized()
}

/// Width of a free Gaussian packet after time `t`.
pub fn free_gaussian_width(sigma0: f64, t: f64, params: &ParticleParams) -> f64 {
    let tau = 2.0 * params.m * sigma0 * sigma0 / params.hbar;
    sigma0 * (1.0 + (t / tau).powi(2)).sqrt()
}

/// Time over which a free packet of width `σ0` spreads by `√2`.
pub fn spreading_time(sigma0: f64, params: &ParticleParams) -> f64 {
    2.0 * params.m * sigma0 * sigma0 / params.hbar
}

/// Physicists' Hermite polynomial `H_n(x)`.
pub fn hermite(n: usize, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * x);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = 2.0 * x * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Eigenstate `n` of `V = ½ m ω² x²` along the first spatial axis.
pub fn oscillator_eigenstate(grid: &GridSpec, n: usize, omega: f64, params: &ParticleParams) -> Result<WaveField, WaveError> {
    if grid.spatial_axes().count() != 1 {
        return Err(WaveError::Unsupported("oscillator eigenstates are one-dimensional".into()));
    }
    let (_, ax) = grid.spatial_axes().next().expect("one axis");
    let d = ax.coord.index() - 1;
    let a = (params.m * omega / params.hbar).sqrt();
    let mut norm = (a / PI.sqrt()).sqrt();
    for k in 1..=n {
        norm /= (2.0 * k as f64).sqrt();
    }
    let vals = (0..grid.len())
        .map(|i| {
            let xi = a * spatial(grid, i)[d];
            Complex64::new(norm * hermite(n, xi) * (-0.5 * xi * xi).exp(), 0.0)
        })
        .collect();
    WaveField::new(grid, vals, 0.0, SolverKind::Schrodinger, *params)
}

/// Energy of oscillator eigenstate `n`.
pub fn oscillator_energy(n: usize, omega: f64, params: &ParticleParams) -> f64 {
    params.hbar * omega * (n as f64 + 0.5)
}

/// Ground-state-width Gaussian displaced to `x0`.
pub fn coherent_state(grid: &GridSpec, x0: f64, omega: f64, params: &ParticleParams) -> Result<WaveField, WaveError> {
    let sigma = (params.hbar / (2.0 * params.m * omega)).sqrt();
    let (_, ax) = grid.spatial_axes().next().ok_or(WaveError::Unsupported("grid has no spatial axis".into()))?;
    let mut c = [0.0; 3];
    c[ax.coord.index() - 1] = x0;
    gaussian(grid, c, sigma, [0.0; 3], params, SolverKind::Schrodinger)
}

/// Two Gaussian slits at `±separation/2` along the first spatial axis.
///
/// On a one-dimensional grid this is the transverse profile behind the
/// slits. On a two-dimensional grid both packets move along the second axis
/// with momentum `p0`, starting at its origin.
pub fn double_slit(
    grid: &GridSpec,
    separation: f64,
    slit_sigma: f64,
    p0: f64,
    params: &ParticleParams,
    kind: SolverKind,
) -> Result<WaveField, WaveError> {
    let axes: Vec<usize> = grid.spatial_axes().map(|(_, a)| a.coord.index() - 1).collect();
    let first = *axes.first().ok_or(WaveError::Unsupported("grid has no spatial axis".into()))?;
    let mut p = [0.0; 3];
    if let Some(&second) = axes.get(1) {
        p[second] = p0;
    }
    let mut c1 = [0.0; 3];
    let mut c2 = [0.0; 3];
    c1[first] = -0.5 * separation;
    c2[first] = 0.5 * separation;
    let a = gaussian(grid, c1, slit_sigma, p, params, kind)?;
    let b = gaussian(grid, c2, slit_sigma, p, params, kind)?;
    let vals = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
    WaveField::new(grid, vals, 0.0, kind, *params)?.normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, Coord};

    #[test]
    fn hermite_values() {
        assert_eq!(hermite(0, 0.7), 1.0);
        assert_eq!(hermite(1, 0.7), 1.4);
        assert!((hermite(3, 0.5) - (8.0 * 0.125 - 12.0 * 0.5)).abs() < 1e-14);
    }

    #[test]
    fn eigenstates_are_normalized_and_orthogonal() {
        let g = GridSpec::line(Coord::X, -12.0, 12.0, 1201, Boundary::OneSided).unwrap();
        let p = ParticleParams::default();
        let s0 = oscillator_eigenstate(&g, 0, 1.0, &p).unwrap();
        let s1 = oscillator_eigenstate(&g, 1, 1.0, &p).unwrap();
        let s4 = oscillator_eigenstate(&g, 4, 1.0, &p).unwrap();
        assert!((s0.norm_sq() - 1.0).abs() < 1e-10);
        assert!((s4.norm_sq() - 1.0).abs() < 1e-10);
        let overlap: f64 = s0.values.iter().zip(&s1.values).map(|(a, b)| a.re * b.re).sum::<f64>() * g.cell_volume();
        assert!(overlap.abs() < 1e-12);
    }

    #[test]
    fn gaussian_density_has_requested_width() {
        let g = GridSpec::line(Coord::X, -20.0, 20.0, 2001, Boundary::OneSided).unwrap();
        let w = gaussian(&g, [1.0, 0.0, 0.0], 2.0, [0.5, 0.0, 0.0], &ParticleParams::default(), SolverKind::Schrodinger).unwrap();
        let dv = g.cell_volume();
        let rho = w.density();
        let mean: f64 = (0..g.len()).map(|i| g.point(i)[1] * rho[i]).sum::<f64>() * dv;
        let var: f64 = (0..g.len()).map(|i| (g.point(i)[1] - mean).powi(2) * rho[i]).sum::<f64>() * dv;
        assert!((mean - 1.0).abs() < 1e-10);
        assert!((var.sqrt() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn width_law() {
        let p = ParticleParams::default();
        let tau = spreading_time(3.0, &p);
        assert!((free_gaussian_width(3.0, tau, &p) - 3.0 * 2f64.sqrt()).abs() < 1e-14);
    }
}
