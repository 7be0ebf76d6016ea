use crate::geometry::{scalar_curvature, WeylStructure};
use crate::grid::{Coord, GridSpec, V4};

use super::{DynamicsError, ExternalFields, ParticleParams};

/// Squared mass and its gradient at a space-time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassSample {
    pub mu2: f64,
    pub grad_mu2: V4,
}

impl MassSample {
    pub fn mu(&self) -> f64 {
        self.mu2.sqrt()
    }

    /// `∂μ / μ`.
    pub fn log_gradient(&self) -> V4 {
        self.grad_mu2.map(|g| 0.5 * g / self.mu2)
    }
}

/// Anything that can supply a particle mass along a worldline.
pub trait MassModel: Sync {
    fn sample(&self, x: &V4) -> Result<MassSample, DynamicsError>;
}

/// `μ² = (mβ)² + αR` on a grid.
#[derive(Debug, Clone)]
pub struct QuantumMassField {
    grid: GridSpec,
    mu2: Vec<f64>,
    grad: Vec<V4>,
    valid: Vec<bool>,
}

impl QuantumMassField {
    /// Wrap precomputed `μ²` values.
    pub fn from_values(grid: &GridSpec, mu2: Vec<f64>) -> Result<Self, DynamicsError> {
        grid.check_len(mu2.len())?;
        let grad = (0..grid.len())
            .map(|i| {
                let mut d = [0.0; 4];
                for c in Coord::ALL {
                    d[c.index()] = grid.d1(&mu2, i, c);
                }
                d
            })
            .collect();
        let valid = mu2.iter().map(|&v| v > 0.0).collect();
        Ok(Self { grid: grid.clone(), mu2, grad, valid })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn mu2(&self) -> &[f64] {
        &self.mu2
    }

    /// `μ` where valid, NaN elsewhere.
    pub fn mu(&self) -> Vec<f64> {
        self.mu2.iter().map(|&v| if v > 0.0 { v.sqrt() } else { f64::NAN }).collect()
    }

    /// False where `μ² ≤ 0` or undefined.
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn invalid_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// Smallest finite `μ²` on the grid.
    pub fn min_mu2(&self) -> f64 {
        self.mu2.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min)
    }
}

impl MassModel for QuantumMassField {
    fn sample(&self, x: &V4) -> Result<MassSample, DynamicsError> {
        let ws = self.grid.interpolation_weights(x).ok_or(DynamicsError::ExitedDomain { x: *x })?;
        let mut mu2 = 0.0;
        let mut grad = [0.0; 4];
        for (i, w) in ws {
            mu2 += w * self.mu2[i];
            for c in 0..4 {
                grad[c] += w * self.grad[i][c];
            }
        }
        if !(mu2 > 0.0) || grad.iter().any(|g| !g.is_finite()) {
            return Err(DynamicsError::InvalidMass { x: *x, mu2 });
        }
        Ok(MassSample { mu2, grad_mu2: grad })
    }
}

/// Classical mass `mβ` of the geodesic limit.
#[derive(Debug, Clone, Copy)]
pub struct ClassicalMass<'a> {
    pub m: f64,
    pub ext: &'a ExternalFields,
}

impl MassModel for ClassicalMass<'_> {
    fn sample(&self, x: &V4) -> Result<MassSample, DynamicsError> {
        let b = self.ext.beta_at(x)?;
        let mb = self.m * b.value;
        Ok(MassSample { mu2: mb * mb, grad_mu2: b.grad.map(|g| 2.0 * self.m * mb * g) })
    }
}

/// Quantum mass of a particle in the Weyl structure `w`.
///
/// Points where `μ² ≤ 0` (or where the scale factor sits below the floor)
/// are flagged in the validity mask rather than reported as errors.
pub fn quantum_mass(w: &WeylStructure, p: &ParticleParams, ext: &ExternalFields) -> Result<QuantumMassField, DynamicsError> {
    let grid = w.grid();
    let r = if p.alpha == 0.0 { None } else { Some(scalar_curvature(w)?) };
    let mut mu2 = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let x = grid.point(i);
        let mb = p.m * ext.beta_at(&x)?.value;
        let v = match &r {
            Some(r) => mb * mb + p.alpha * r.values()[i],
            None => mb * mb,
        };
        mu2.push(v);
    }
    QuantumMassField::from_values(grid, mu2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{MetricSource, ScalarJet, ScaleSource, MINKOWSKI};
    use crate::grid::Boundary;
    use std::sync::Arc;

    fn line() -> GridSpec {
        GridSpec::line(Coord::X, -0.5, 0.5, 11, Boundary::OneSided).unwrap()
    }

    #[test]
    fn constant_factor_gives_bare_mass() {
        let w = WeylStructure::flat_with_factor(&line(), vec![3.0; 11]).unwrap();
        let mu = quantum_mass(&w, &ParticleParams::default(), &ExternalFields::flat()).unwrap();
        assert!(mu.mu().iter().all(|&m| (m - 1.0).abs() < 1e-12), "{:?}", mu.mu2());
    }

    #[test]
    fn cos_factor_doubles_mass_squared() {
        let b = Arc::new(|p: &V4| {
            let (s, c) = p[1].sin_cos();
            let mut h = [[0.0; 4]; 4];
            h[1][1] = -c;
            ScalarJet::new(c, [0.0, -s, 0.0, 0.0], h)
        });
        let w = WeylStructure::new(&line(), MetricSource::Constant(MINKOWSKI), ScaleSource::AnalyticFactor(b)).unwrap();
        let mu = quantum_mass(&w, &ParticleParams::default(), &ExternalFields::flat()).unwrap();
        assert!((mu.mu2()[5] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_is_exactly_classical() {
        let g = line();
        let w = WeylStructure::flat_with_factor(&g, g.sample(|p| (p[1] * 3.0).cos())).unwrap();
        let p = ParticleParams::new(1.7, 0.0, 1.0).unwrap().with_alpha(0.0);
        let mu = quantum_mass(&w, &p, &ExternalFields::flat()).unwrap();
        assert!(mu.mu().iter().all(|&m| m == 1.7));
        let ext = ExternalFields::flat();
        let c = ClassicalMass { m: 1.7, ext: &ext };
        let x = [0.0, 0.1, 0.0, 0.0];
        assert_eq!(c.sample(&x).unwrap(), mu.sample(&x).unwrap());
    }

    #[test]
    fn negative_mass_squared_is_masked() {
        let g = line();
        let mu = QuantumMassField::from_values(&g, g.sample(|p| p[1])).unwrap();
        assert_eq!(mu.invalid_count(), 6);
        assert!(matches!(mu.sample(&[0.0, -0.3, 0.0, 0.0]), Err(DynamicsError::InvalidMass { .. })));
        assert!(matches!(mu.sample(&[0.0, 0.9, 0.0, 0.0]), Err(DynamicsError::ExitedDomain { .. })));
    }
}
