use serde::Serialize;

use super::{PolarForm, ResidualMode, WaveError};
use crate::dynamics::{ExternalFields, ParticleParams};
use crate::geometry::invert4;
use crate::grid::{Coord, V4};

/// Ensemble densities derived from `(b, S)`.
#[derive(Debug, Clone, Serialize)]
pub struct DensitySet {
    /// 4-density, proportional to `|Ψ|²`.
    pub rho: Vec<f64>,
    /// Probability density per unit spatial volume.
    pub w: Vec<f64>,
    /// Charge-current vector `J^l` (upper index).
    pub j: Vec<V4>,
}

/// Densities with all proportionality constants fixed by `∫ w dV = 1` on
/// the first time slice.
///
/// Nonrelativistic: `w = ρ = b²`, `J^0 = e w`, `J^k = e w P_k / m`.
/// Relativistic: `w ∝ b² E` with `E = -P_0`, `ρ ∝ b²`, and
/// `J^l = -e b² P^l / m`, which is the familiar `i(Ψ* DΨ - Ψ DΨ*)` current.
pub fn densities(p: &PolarForm, params: &ParticleParams, ext: &ExternalFields, mode: ResidualMode) -> Result<DensitySet, WaveError> {
    let grid = &p.grid;
    let n = grid.len();
    let ginv = invert4(&ext.metric).ok_or(WaveError::Unsupported("external metric is singular".into()))?;
    let mut pl = vec![[0.0; 4]; n];
    for (i, v) in pl.iter_mut().enumerate() {
        if p.node_mask[i] {
            continue;
        }
        let c = ext.coupling(params.e, &grid.point(i)).ok_or(WaveError::Unsupported("external field undefined on grid".into()))?;
        let gs = p.grad_s(i);
        *v = std::array::from_fn(|l| gs[l] + c.k[l]);
    }
    let b2: Vec<f64> = p.b.iter().map(|b| b * b).collect();
    let raw_w: Vec<f64> = match mode {
        ResidualMode::Nonrelativistic => b2.clone(),
        ResidualMode::Relativistic => b2.iter().zip(&pl).map(|(b, q)| (b * -q[0]).max(0.0)).collect(),
    };
    let dv: f64 = grid.spatial_axes().map(|(_, a)| a.spacing()).product();
    let first_slice = |i: &usize| grid.axis_of(Coord::T).is_none_or(|a| grid.axis_index(*i, a) == 0);
    let z: f64 = (0..n).filter(first_slice).map(|i| raw_w[i]).sum::<f64>() * dv;
    let zr: f64 = (0..n).filter(first_slice).map(|i| b2[i]).sum::<f64>() * dv;
    if !(z > 0.0) || !(zr > 0.0) {
        return Err(WaveError::ZeroNorm);
    }
    let e = params.e;
    let j = (0..n)
        .map(|i| {
            if p.node_mask[i] {
                return [0.0; 4];
            }
            let r = b2[i] / zr;
            match mode {
                ResidualMode::Nonrelativistic => {
                    let mut v = [e * r, 0.0, 0.0, 0.0];
                    for k in 1..4 {
                        v[k] = e * r * pl[i][k] / params.m;
                    }
                    v
                }
                ResidualMode::Relativistic => {
                    let up: V4 = std::array::from_fn(|a| (0..4).map(|b| ginv[a][b] * pl[i][b]).sum());
                    up.map(|c| -e * r * c / params.m)
                }
            }
        })
        .collect();
    Ok(DensitySet { rho: b2.iter().map(|v| v / zr).collect(), w: raw_w.iter().map(|v| v / z).collect(), j })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Axis, Boundary, GridSpec};
    use crate::wave::{init, polar_decompose, SolverKind, DEFAULT_B_FLOOR_REL};

    #[test]
    fn gaussian_density_is_normalized() {
        let g = GridSpec::line(Coord::X, -10.0, 10.0, 401, Boundary::OneSided).unwrap();
        let p = ParticleParams::default();
        let psi = init::gaussian(&g, [0.0; 3], 1.5, [0.0; 3], &p, SolverKind::Schrodinger).unwrap();
        let d = densities(&polar_decompose(&psi, DEFAULT_B_FLOOR_REL), &p, &ExternalFields::flat(), ResidualMode::Nonrelativistic).unwrap();
        let total: f64 = d.w.iter().sum::<f64>() * g.cell_volume();
        assert!((total - 1.0).abs() < 1e-12);
        for (w, v) in d.w.iter().zip(psi.density()) {
            assert!((w - v).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_current_ratio() {
        let g = GridSpec::new(vec![
            Axis::new(Coord::T, 0.0, 1.0, 6, Boundary::OneSided),
            Axis::new(Coord::X, 0.0, 1.0, 11, Boundary::OneSided),
        ])
        .unwrap();
        let (m, k): (f64, f64) = (1.0, 0.8);
        let e = (m * m + k * k).sqrt();
        let n = g.len();
        let pf = PolarForm {
            s: g.sample(|x| k * x[1] - e * x[0]),
            grid: g,
            t: 0.0,
            b: vec![1.0; n],
            node_mask: vec![false; n],
            region: vec![0; n],
            regions: 1,
            b_floor: 0.0,
            kind: SolverKind::KleinGordon,
            params: ParticleParams::default(),
        };
        let d = densities(&pf, &ParticleParams::default(), &ExternalFields::flat(), ResidualMode::Relativistic).unwrap();
        for j in &d.j {
            assert!((j[1] / j[0] - k / e).abs() < 1e-12);
        }
    }
}
