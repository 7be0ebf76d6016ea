use serde::{Deserialize, Serialize};

use super::{DynamicsError, ExternalFields, ParticleParams, QuantumMassField};
use crate::geometry::{invert4, CoField};
use crate::grid::{Coord, M4, V4};
use crate::wave::PolarForm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// `μ u^l = -(S^{,l} + eA^l)` with `μ` from the normalization.
    Relativistic,
    /// `v = (∇S + eA) / m` (Cartesian components, Minkowski metric).
    Nonrelativistic,
}

/// Guided 4-velocity at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guidance {
    /// Normalized 4-velocity; in nonrelativistic mode `(1, dx/dt)`.
    pub u: V4,
    /// `dx^j/dt`.
    pub velocity: [f64; 3],
    /// Mass implied by the normalization (`m` in nonrelativistic mode).
    pub mu: f64,
}

fn ginv_of(ext: &ExternalFields) -> Result<M4, DynamicsError> {
    invert4(&ext.metric).ok_or(DynamicsError::Params("external metric is singular".into()))
}

/// Velocity from the phase gradient of the wave field at `at`, with the
/// gradient interpolated multilinearly from grid points.
///
/// Relativistic guidance needs a time axis in `p.grid`; on spatial grids the
/// time coordinate of `at` is ignored.
pub fn guiding_velocity(
    p: &PolarForm,
    ext: &ExternalFields,
    params: &ParticleParams,
    at: &V4,
    mode: GuidanceMode,
) -> Result<Guidance, DynamicsError> {
    let grid = &p.grid;
    let ws = grid.interpolation_weights(at).ok_or(DynamicsError::ExitedDomain { x: *at })?;
    let mut b = 0.0;
    let mut gs = [0.0; 4];
    for &(i, w) in &ws {
        if w == 0.0 {
            continue;
        }
        if p.node_mask[i] {
            return Err(DynamicsError::NodeProximity { x: *at, b: p.b[i] });
        }
        b += w * p.b[i];
        let g = p.grad_s(i);
        for c in 0..4 {
            gs[c] += w * g[c];
        }
    }
    if !(b > p.b_floor) {
        return Err(DynamicsError::NodeProximity { x: *at, b });
    }
    let c = ext.coupling(params.e, at).ok_or(DynamicsError::ExitedDomain { x: *at })?;
    let pl: V4 = std::array::from_fn(|l| gs[l] + c.k[l]);
    let ginv = ginv_of(ext)?;
    let up: V4 = std::array::from_fn(|a| (0..4).map(|k| ginv[a][k] * pl[k]).sum());
    match mode {
        GuidanceMode::Relativistic => {
            if grid.axis_of(Coord::T).is_none() {
                return Err(DynamicsError::Params("relativistic guidance needs a time axis".into()));
            }
            let mu2: f64 = (0..4).map(|l| up[l] * pl[l]).sum();
            if !(mu2 > 0.0) || !(up[0] < 0.0) {
                return Err(DynamicsError::NotTimelike { x: *at });
            }
            let mu = mu2.sqrt();
            let u = up.map(|v| -v / mu);
            Ok(Guidance { u, velocity: [u[1] / u[0], u[2] / u[0], u[3] / u[0]], mu })
        }
        GuidanceMode::Nonrelativistic => {
            let v = [-up[1] / params.m, -up[2] / params.m, -up[3] / params.m];
            Ok(Guidance { u: [1.0, v[0], v[1], v[2]], velocity: v, mu: params.m })
        }
    }
}

/// `g^{lm}(S_,l + eA_l)(S_,m + eA_m) - μ²` at every grid point, with `S`
/// differenced directly (no phase wrapping).
pub fn hj_residual(s: &CoField, mu: &QuantumMassField, ext: &ExternalFields, e: f64) -> Result<Vec<f64>, DynamicsError> {
    if s.rank() != 0 {
        return Err(DynamicsError::Params("action must be a scalar field".into()));
    }
    let grid = s.grid();
    if grid != mu.grid() {
        return Err(DynamicsError::GridMismatch);
    }
    let ginv = ginv_of(ext)?;
    let vals = s.values();
    (0..grid.len())
        .map(|i| {
            let x = grid.point(i);
            let c = ext.coupling(e, &x).ok_or(DynamicsError::ExitedDomain { x })?;
            let pl: V4 = std::array::from_fn(|l| grid.d1(vals, i, Coord::ALL[l]) + c.k[l]);
            let mut p2 = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    p2 += ginv[a][b] * pl[a] * pl[b];
                }
            }
            Ok(p2 - mu.mu2()[i])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Axis, Boundary, GridSpec};
    use crate::wave::{init, polar_decompose, SolverKind, DEFAULT_B_FLOOR_REL};

    fn plane_polar(p: f64, m: f64) -> PolarForm {
        let g = GridSpec::new(vec![
            Axis::new(Coord::T, 0.0, 1.0, 6, Boundary::OneSided),
            Axis::new(Coord::X, 0.0, 2.0, 9, Boundary::OneSided),
        ])
        .unwrap();
        let e = (m * m + p * p).sqrt();
        let n = g.len();
        PolarForm {
            s: g.sample(|x| p * x[1] - e * x[0]),
            grid: g,
            t: 0.0,
            b: vec![1.0; n],
            node_mask: vec![false; n],
            region: vec![0; n],
            regions: 1,
            b_floor: 0.0,
            kind: SolverKind::KleinGordon,
            params: ParticleParams::default(),
        }
    }

    #[test]
    fn plane_wave_moves_at_p_over_e() {
        let (p, m) = (0.6, 1.0);
        let pf = plane_polar(p, m);
        let g = guiding_velocity(&pf, &ExternalFields::flat(), &ParticleParams::default(), &[0.37, 1.1, 0.0, 0.0], GuidanceMode::Relativistic).unwrap();
        let e = (m * m + p * p).sqrt();
        assert!((g.velocity[0] - p / e).abs() < 1e-12);
        assert!((g.mu - m).abs() < 1e-12);
    }

    #[test]
    fn real_field_is_at_rest() {
        let g = GridSpec::line(Coord::X, -5.0, 5.0, 101, Boundary::OneSided).unwrap();
        let params = ParticleParams::default();
        let psi = init::oscillator_eigenstate(&g, 0, 1.0, &params).unwrap();
        let pf = polar_decompose(&psi, DEFAULT_B_FLOOR_REL);
        let v = guiding_velocity(&pf, &ExternalFields::flat(), &params, &[0.0, 0.33, 0.0, 0.0], GuidanceMode::Nonrelativistic).unwrap();
        assert_eq!(v.velocity, [0.0; 3]);
        assert_eq!(v.u, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn node_proximity_is_reported() {
        let g = GridSpec::line(Coord::X, -5.0, 5.0, 101, Boundary::OneSided).unwrap();
        let params = ParticleParams::default();
        let psi = init::oscillator_eigenstate(&g, 1, 1.0, &params).unwrap();
        let pf = polar_decompose(&psi, 0.05);
        let r = guiding_velocity(&pf, &ExternalFields::flat(), &params, &[0.0, 0.01, 0.0, 0.0], GuidanceMode::Nonrelativistic);
        assert!(matches!(r, Err(DynamicsError::NodeProximity { .. })));
    }

    #[test]
    fn hj_residual_of_plane_wave_and_zero_action() {
        let g = GridSpec::new(vec![
            Axis::new(Coord::T, 0.0, 1.0, 6, Boundary::OneSided),
            Axis::new(Coord::X, 0.0, 1.0, 6, Boundary::OneSided),
        ])
        .unwrap();
        let (p, m): (f64, f64) = (0.4, 1.0);
        let e = (m * m + p * p).sqrt();
        let s = CoField::scalar_from_fn(&g, 0, |x| p * x[1] - e * x[0]);
        let mu = QuantumMassField::from_values(&g, vec![m * m; g.len()]).unwrap();
        let r = hj_residual(&s, &mu, &ExternalFields::flat(), 1.0).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        let zero = CoField::scalar_from_fn(&g, 0, |_| 0.0);
        let r = hj_residual(&zero, &mu, &ExternalFields::flat(), 1.0).unwrap();
        assert!(r.iter().all(|&v| v == -1.0));
    }
}
