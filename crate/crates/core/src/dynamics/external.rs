use crate::geometry::jet::{CovectorFn, ScalarFn};
use crate::geometry::{CoField, CovectorJet, ScalarJet, Variance, MINKOWSKI};
use crate::grid::{Coord, GridSpec, M4, V4};

use super::DynamicsError;

fn gradients(grid: &GridSpec, f: &[f64]) -> Vec<V4> {
    (0..grid.len())
        .map(|i| {
            let mut d = [0.0; 4];
            for c in Coord::ALL {
                d[c.index()] = grid.d1(f, i, c);
            }
            d
        })
        .collect()
}

fn interpolate_vec(grid: &GridSpec, f: &[V4], x: &V4) -> Option<V4> {
    let ws = grid.interpolation_weights(x)?;
    let mut out = [0.0; 4];
    for (i, w) in ws {
        for c in 0..4 {
            out[c] += w * f[i][c];
        }
    }
    Some(out)
}

/// Scalar field known on a grid or analytically.
///
/// Sampled fields are interpolated multilinearly, derivatives included;
/// the returned jet carries no Hessian.
#[derive(Clone)]
pub enum ScalarSource {
    Sampled { grid: GridSpec, values: Vec<f64>, grad: Vec<V4> },
    Analytic(ScalarFn),
}

impl std::fmt::Debug for ScalarSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScalarSource::Sampled { grid, .. } => write!(f, "Sampled({})", grid.describe()),
            ScalarSource::Analytic(_) => f.write_str("Analytic"),
        }
    }
}

impl ScalarSource {
    pub fn sampled(grid: &GridSpec, values: Vec<f64>) -> Result<Self, DynamicsError> {
        grid.check_len(values.len())?;
        let grad = gradients(grid, &values);
        Ok(ScalarSource::Sampled { grid: grid.clone(), values, grad })
    }

    pub fn eval(&self, x: &V4) -> Option<ScalarJet> {
        match self {
            ScalarSource::Analytic(f) => Some(f.jet(x)),
            ScalarSource::Sampled { grid, values, grad } => {
                let v = grid.interpolate(values, x)?;
                let g = interpolate_vec(grid, grad, x)?;
                Some(ScalarJet::new(v, g, [[0.0; 4]; 4]))
            }
        }
    }

    /// Values at the points of `grid`; `None` where `grid` pokes outside the source.
    pub fn sample_on(&self, grid: &GridSpec) -> Vec<Option<ScalarJet>> {
        (0..grid.len()).map(|i| self.eval(&grid.point(i))).collect()
    }
}

/// Covariant vector field known on a grid or analytically.
#[derive(Clone)]
pub enum VectorSource {
    Sampled { grid: GridSpec, values: [Vec<f64>; 4], grad: [Vec<V4>; 4] },
    Analytic(CovectorFn),
}

impl std::fmt::Debug for VectorSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VectorSource::Sampled { grid, .. } => write!(f, "Sampled({})", grid.describe()),
            VectorSource::Analytic(_) => f.write_str("Analytic"),
        }
    }
}

impl VectorSource {
    /// From a covariant rank-1 co-field.
    pub fn sampled(field: &CoField) -> Result<Self, DynamicsError> {
        if field.slots() != [Variance::Down] {
            return Err(DynamicsError::Params(format!("vector potential must have one lower slot, got {:?}", field.slots())));
        }
        let grid = field.grid().clone();
        let values: [Vec<f64>; 4] = std::array::from_fn(|c| field.component(&[c]).to_vec());
        let grad = std::array::from_fn(|c| gradients(&grid, &values[c]));
        Ok(VectorSource::Sampled { grid, values, grad })
    }

    /// Constant covector.
    pub fn constant(a: V4) -> Self {
        VectorSource::Analytic(std::sync::Arc::new(move |_: &V4| CovectorJet { k: a, dk: [[0.0; 4]; 4] }))
    }

    pub fn eval(&self, x: &V4) -> Option<CovectorJet> {
        match self {
            VectorSource::Analytic(f) => Some(f.jet(x)),
            VectorSource::Sampled { grid, values, grad } => {
                let ws = grid.interpolation_weights(x)?;
                let mut out = CovectorJet::zero();
                for (i, w) in ws {
                    for a in 0..4 {
                        out.k[a] += w * values[a][i];
                        for c in 0..4 {
                            out.dk[a][c] += w * grad[a][i][c];
                        }
                    }
                }
                Some(out)
            }
        }
    }
}

/// Fields the particle moves in, apart from its own wave.
///
/// `potential` is a scalar potential energy `V`. It enters exactly like
/// `e A_0`, which lets nonrelativistic scenarios state `V` directly.
#[derive(Debug, Clone)]
pub struct ExternalFields {
    pub metric: M4,
    pub vector_potential: Option<VectorSource>,
    pub potential: Option<ScalarSource>,
    /// Classical scale factor; `None` means `β ≡ 1`.
    pub beta: Option<ScalarSource>,
}

impl Default for ExternalFields {
    fn default() -> Self {
        Self::flat()
    }
}

impl ExternalFields {
    pub fn flat() -> Self {
        Self { metric: MINKOWSKI, vector_potential: None, potential: None, beta: None }
    }

    pub fn with_vector_potential(mut self, a: VectorSource) -> Self {
        self.vector_potential = Some(a);
        self
    }

    pub fn with_potential(mut self, v: ScalarSource) -> Self {
        self.potential = Some(v);
        self
    }

    pub fn with_beta(mut self, beta: ScalarSource) -> Self {
        self.beta = Some(beta);
        self
    }

    /// `e A_l + V δ_l0` with its derivatives. `None` outside a sampled field.
    pub fn coupling(&self, e: f64, x: &V4) -> Option<CovectorJet> {
        let mut out = CovectorJet::zero();
        if let Some(a) = &self.vector_potential {
            let j = a.eval(x)?;
            for l in 0..4 {
                out.k[l] = e * j.k[l];
                for c in 0..4 {
                    out.dk[l][c] = e * j.dk[l][c];
                }
            }
        }
        if let Some(v) = &self.potential {
            let j = v.eval(x)?;
            out.k[0] += j.value;
            for c in 0..4 {
                out.dk[0][c] += j.grad[c];
            }
        }
        Some(out)
    }

    /// Classical scale factor with gradient.
    pub fn beta_at(&self, x: &V4) -> Result<ScalarJet, DynamicsError> {
        let j = match &self.beta {
            None => return Ok(ScalarJet::constant(1.0)),
            Some(b) => b.eval(x).ok_or(DynamicsError::ExitedDomain { x: *x })?,
        };
        if !(j.value > 0.0) {
            return Err(DynamicsError::NonPositiveBeta { x: *x, value: j.value });
        }
        Ok(j)
    }

    /// `e A_l + V δ_l0` at every point of `grid` (zero where not defined).
    pub fn coupling_on(&self, e: f64, grid: &GridSpec) -> Vec<V4> {
        (0..grid.len()).map(|i| self.coupling(e, &grid.point(i)).map(|j| j.k).unwrap_or([0.0; 4])).collect()
    }

    /// Potential energy `V` at every point of `grid` (zero when absent).
    pub fn potential_on(&self, grid: &GridSpec) -> Vec<f64> {
        match &self.potential {
            None => vec![0.0; grid.len()],
            Some(v) => (0..grid.len()).map(|i| v.eval(&grid.point(i)).map(|j| j.value).unwrap_or(0.0)).collect(),
        }
    }

    pub fn has_vector_potential(&self) -> bool {
        self.vector_potential.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    #[test]
    fn sampled_scalar_interpolates_linear_exactly() {
        let g = GridSpec::line(Coord::X, 0.0, 1.0, 11, Boundary::OneSided).unwrap();
        let s = ScalarSource::sampled(&g, g.sample(|p| 2.0 * p[1] + 1.0)).unwrap();
        let j = s.eval(&[5.0, 0.37, 0.0, 0.0]).unwrap();
        assert!((j.value - 1.74).abs() < 1e-14);
        assert!((j.grad[1] - 2.0).abs() < 1e-12);
        assert!(s.eval(&[0.0, 1.5, 0.0, 0.0]).is_none());
    }

    #[test]
    fn coupling_folds_potential_into_time_component() {
        let g = GridSpec::line(Coord::X, 0.0, 1.0, 11, Boundary::OneSided).unwrap();
        let ext = ExternalFields::flat()
            .with_vector_potential(VectorSource::constant([0.5, 0.0, 1.0, 0.0]))
            .with_potential(ScalarSource::sampled(&g, g.sample(|p| p[1] * p[1])).unwrap());
        let c = ext.coupling(2.0, &[0.0, 0.5, 0.0, 0.0]).unwrap();
        assert!((c.k[0] - (1.0 + 0.25)).abs() < 1e-2);
        assert_eq!(c.k[2], 2.0);
        assert!((c.dk[0][1] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn beta_must_be_positive() {
        let ext = ExternalFields::flat().with_beta(ScalarSource::Analytic(std::sync::Arc::new(|_: &V4| ScalarJet::constant(-1.0))));
        assert!(matches!(ext.beta_at(&[0.0; 4]), Err(DynamicsError::NonPositiveBeta { .. })));
        assert_eq!(ExternalFields::flat().beta_at(&[0.0; 4]).unwrap().value, 1.0);
    }
}
