use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{step_plan, SolverDiagnostics, SolverKind, WaveError, WaveField, WaveSeries};
use crate::dynamics::ExternalFields;
use crate::grid::{Boundary, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KgOptions {
    pub t_end: f64,
    pub dt: f64,
    pub snapshot_every: usize,
}

/// Spatial operator `K = -ħ² Δ_A + m² - W²` with link variables for the
/// spatial potential and `W = e A_0 + V`.
struct Operator {
    grid: GridSpec,
    hbar: f64,
    /// `m² - W²` per point.
    mass_term: Vec<f64>,
    /// Per point and axis: link to the `+1` neighbour, `None` at an open edge.
    links: Vec<Vec<Option<(usize, Complex64)>>>,
    inv_h2: Vec<f64>,
}

impl Operator {
    fn new(grid: &GridSpec, ext: &ExternalFields, e: f64, m: f64, hbar: f64) -> Self {
        let w: Vec<f64> = ext.coupling_on(e, grid).iter().map(|c| c[0]).collect();
        let mass_term = w.iter().map(|wi| m * m - wi * wi).collect();
        let links = (0..grid.len())
            .map(|i| {
                (0..grid.ndim())
                    .map(|a| {
                        let ax = &grid.axes()[a];
                        let j = grid.neighbor(i, a, 1)?;
                        let h = ax.spacing();
                        let mut mid = grid.point(i);
                        mid[ax.coord.index()] += 0.5 * h;
                        let c = ext.coupling(e, &mid).map(|c| c.k[ax.coord.index()]).unwrap_or(0.0);
                        Some((j, Complex64::from_polar(1.0, c * h / hbar)))
                    })
                    .collect()
            })
            .collect();
        let inv_h2 = grid.axes().iter().map(|a| 1.0 / (a.spacing() * a.spacing())).collect();
        Self { grid: grid.clone(), hbar, mass_term, links, inv_h2 }
    }

    fn apply(&self, psi: &[Complex64], out: &mut [Complex64]) {
        let h2 = self.hbar * self.hbar;
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for i in 0..psi.len() {
            out[i] += self.mass_term[i] * psi[i];
            for a in 0..self.grid.ndim() {
                if let Some((j, u)) = self.links[i][a] {
                    // covariant difference across the link i -> j
                    let d = u * psi[j] - psi[i];
                    let f = h2 * self.inv_h2[a];
                    out[i] -= f * d;
                    out[j] -= f * (u.conj() * psi[i] - psi[j]);
                }
            }
        }
        // open edges: the missing neighbour is a zero ghost
        for i in 0..psi.len() {
            for a in 0..self.grid.ndim() {
                let f = h2 * self.inv_h2[a];
                if self.links[i][a].is_none() {
                    out[i] += f * psi[i];
                }
                if self.grid.neighbor(i, a, -1).is_none() {
                    out[i] += f * psi[i];
                }
            }
        }
    }

    /// Upper bound on the largest eigenvalue of `K`.
    fn spectral_bound(&self) -> f64 {
        let kin: f64 = self.inv_h2.iter().map(|f| 4.0 * self.hbar * self.hbar * f).sum();
        kin + self.mass_term.iter().fold(0.0f64, |m, v| m.max(*v))
    }
}

fn dot_re(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Discrete energy between levels `n` and `n+1`, conserved by the scheme.
pub fn kg_energy(k_next: &[Complex64], next: &[Complex64], cur: &[Complex64], hbar: f64, dt: f64, dv: f64) -> f64 {
    let diff: f64 = next.iter().zip(cur).map(|(a, b)| (a - b).norm_sqr()).sum();
    (hbar * hbar * diff / (dt * dt) + dot_re(k_next, cur)) * dv
}

/// `∂Ψ/∂t` for a positive-frequency field: `-i ω(k) Ψ` in Fourier space on
/// periodic grids, `-i m Ψ / ħ` (rest-mass rotation) otherwise.
pub fn positive_frequency_rate(psi: &WaveField) -> Vec<Complex64> {
    let grid = &psi.grid;
    let p = psi.params;
    let mi = Complex64::new(0.0, -1.0);
    if grid.ndim() != 1 || grid.axes()[0].boundary != Boundary::Periodic {
        return psi.values.iter().map(|v| mi * p.m / p.hbar * v).collect();
    }
    let n = grid.len();
    let h = grid.axes()[0].spacing();
    let mut planner = FftPlanner::new();
    let mut buf = psi.values.clone();
    planner.plan_fft_forward(n).process(&mut buf);
    for (j, v) in buf.iter_mut().enumerate() {
        let jj = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        let k = 2.0 * std::f64::consts::PI * jj / (n as f64 * h);
        let omega = (p.m * p.m + p.hbar * p.hbar * k * k).sqrt() / p.hbar;
        *v *= mi * omega / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Leapfrog evolution of `(iħ∂ - eA)² Ψ = m² Ψ` on a flat grid with static fields.
///
/// Stable when `dt ≤ 2ħ / √λ_max(K)`, which for `m = 0` is the usual
/// `dt ≤ h/√d`. Non-periodic axes act as reflecting walls and are reported
/// as a warning.
pub fn solve_klein_gordon(
    psi0: &WaveField,
    psi_dot0: &[Complex64],
    ext: &ExternalFields,
    opts: &KgOptions,
) -> Result<WaveSeries, WaveError> {
    let grid = &psi0.grid;
    let p = psi0.params;
    grid.check_len(psi_dot0.len())?;
    let (steps, dt) = step_plan(opts.t_end, opts.dt)?;
    let op = Operator::new(grid, ext, p.e, p.m, p.hbar);
    let h = grid.min_spacing();
    let limit = (2.0 * p.hbar / op.spectral_bound().sqrt()).min(h);
    if dt > limit {
        return Err(WaveError::Cfl { dt, limit });
    }
    let mut diag = SolverDiagnostics { scheme: "leapfrog".into(), ..Default::default() };
    if grid.axes().iter().any(|a| a.boundary != Boundary::Periodic) {
        diag.warnings.push("non-periodic boundary: outgoing waves reflect at the grid edge".into());
    }
    let hb = p.hbar;
    let w: Vec<f64> = ext.coupling_on(p.e, grid).iter().map(|c| c[0]).collect();
    let n = grid.len();
    let dv = grid.cell_volume();
    let i1 = Complex64::new(0.0, 1.0);

    let mut k = vec![Complex64::new(0.0, 0.0); n];
    let cur0 = psi0.values.clone();
    op.apply(&cur0, &mut k);
    // Taylor start: Ψ̈ = -(KΨ + 2iħWΨ̇)/ħ²
    let mut next: Vec<Complex64> = (0..n)
        .map(|i| {
            let acc = -(k[i] + 2.0 * i1 * hb * w[i] * psi_dot0[i]) / (hb * hb);
            cur0[i] + dt * psi_dot0[i] + 0.5 * dt * dt * acc
        })
        .collect();
    let mut prev = cur0;
    op.apply(&next, &mut k);
    let e0 = kg_energy(&k, &next, &prev, hb, dt, dv);
    let mut max_drift: f64 = 0.0;

    let every = opts.snapshot_every.max(1);
    let mut snaps = vec![WaveField { kind: SolverKind::KleinGordon, ..psi0.clone() }];
    let mut dots = vec![psi_dot0.to_vec()];
    let a = Complex64::new(hb * hb / (dt * dt), 0.0);
    // after this loop step, `prev` = Ψ^n, `next` = Ψ^{n+1}
    for step in 1..=steps {
        // advance: Ψ^{n+1} from Ψ^n (= next) and Ψ^{n-1} (= prev); k holds KΨ^n
        let cur = std::mem::take(&mut next);
        let mut new = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let b = i1 * hb * w[i] / dt;
            new[i] = (2.0 * a * cur[i] - k[i] - prev[i] * (a - b)) / (a + b);
        }
        if new.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(WaveError::NotFinite { t: psi0.t + (step + 1) as f64 * dt });
        }
        if step % every == 0 || step == steps {
            let t = psi0.t + step as f64 * dt;
            snaps.push(WaveField { grid: grid.clone(), values: cur.clone(), t, kind: SolverKind::KleinGordon, params: p });
            dots.push(new.iter().zip(&prev).map(|(x, y)| (x - y) / (2.0 * dt)).collect());
        }
        op.apply(&new, &mut k);
        let e = kg_energy(&k, &new, &cur, hb, dt, dv);
        max_drift = max_drift.max(((e - e0) / e0).abs());
        prev = cur;
        next = new;
    }
    diag.energy_drift = Some(max_drift);
    Ok(WaveSeries { snapshots: snaps, psi_dot: dots, dt, steps, diagnostics: diag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ParticleParams, VectorSource};
    use crate::grid::Coord;
    use crate::wave::init;

    fn ring(n: usize) -> GridSpec {
        GridSpec::line(Coord::X, 0.0, 2.0 * std::f64::consts::PI, n, Boundary::Periodic).unwrap()
    }

    #[test]
    fn operator_is_hermitian_with_links() {
        let g = GridSpec::line(Coord::X, 0.0, 1.0, 9, Boundary::OneSided).unwrap();
        let ext = ExternalFields::flat().with_vector_potential(VectorSource::constant([0.3, 0.7, 0.0, 0.0]));
        let op = Operator::new(&g, &ext, 1.0, 1.0, 1.0);
        let x: Vec<Complex64> = (0..9).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let y: Vec<Complex64> = (0..9).map(|i| Complex64::new(i as f64 * 0.1, -1.0)).collect();
        let (mut kx, mut ky) = (vec![Complex64::new(0.0, 0.0); 9], vec![Complex64::new(0.0, 0.0); 9]);
        op.apply(&x, &mut kx);
        op.apply(&y, &mut ky);
        let l: Complex64 = y.iter().zip(&kx).map(|(a, b)| a.conj() * b).sum();
        let r: Complex64 = ky.iter().zip(&x).map(|(a, b)| a.conj() * b).sum();
        assert!((l - r).norm() < 1e-12);
    }

    #[test]
    fn plane_wave_is_reproduced() {
        let g = ring(128);
        let p = ParticleParams::default();
        let k = 2.0;
        let psi = init::plane_wave(&g, [k, 0.0, 0.0], 0.0, &p, SolverKind::KleinGordon).unwrap();
        let dot = positive_frequency_rate(&psi);
        let opts = KgOptions { t_end: 1.0, dt: 0.005, snapshot_every: 100 };
        let s = solve_klein_gordon(&psi, &dot, &ExternalFields::flat(), &opts).unwrap();
        let exact = init::plane_wave(&g, [k, 0.0, 0.0], 1.0, &p, SolverKind::KleinGordon).unwrap();
        let err = s.last().values.iter().zip(&exact.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let amp = exact.values[0].norm();
        // spatial dispersion error ~ k⁴h²/24E over t = 1
        assert!(err < 2e-3 * amp, "{err}");
        assert!(s.diagnostics.energy_drift.unwrap() < 1e-10);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = ring(64);
        let p = ParticleParams::default();
        let psi = init::plane_wave(&g, [1.0, 0.0, 0.0], 0.0, &p, SolverKind::KleinGordon).unwrap();
        let dot = positive_frequency_rate(&psi);
        let opts = KgOptions { t_end: 1.0, dt: 0.2, snapshot_every: 1 };
        assert!(matches!(solve_klein_gordon(&psi, &dot, &ExternalFields::flat(), &opts), Err(WaveError::Cfl { .. })));
    }
}
