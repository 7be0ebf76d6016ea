//! Integrable Weyl geometry on grids.
//!
//! A [`WeylStructure`] pairs a metric `g_ik` (scale weight +2) with a scale
//! vector `k_i`, given either directly or through a scale factor `b` with
//! `k_i = -b_,i / b`. Either piece may be sampled on the grid (derivatives by
//! the stencils in [`crate::grid`]) or analytic (exact derivative jets), so
//! identity checks can tell discretization error from implementation error.
//!
//! Signature is fixed to (+, -, -, -).

mod cofield;
mod connection;
mod curvature;
mod dump;
mod identities;
pub mod jet;
mod scale;

use rayon::prelude::*;
use thiserror::Error;

pub use cofield::{CoField, Variance};
pub use connection::{co_derivative, weyl_connection, ConnectionField, PointGeometry};
pub use curvature::{curvature, riemann_tensor, scalar_curvature, CurvatureBundle, PointCurvature};
pub use dump::{debug_dump, FieldSummary, GeometryDump};
pub use identities::{
    bianchi_residual, integrability_residual, integrability_residual_of, metricity_residual, reconstruct_b, reconstruct_b_along,
    INTERIOR_MARGIN,
};
pub use jet::{CovectorJet, MetricJet, ScalarJet, MINKOWSKI};
pub use scale::{scale_transform, scale_transform_field, ScaleFunction};

use crate::grid::{Coord, GridError, GridSpec, M4, V4};
use jet::{CovectorFn, MetricFn, ScalarFn, T3, T4, ZERO_M4, ZERO_T3, ZERO_T4};

/// Default pointwise floor below which a scale factor is rejected.
pub const DEFAULT_B_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("degenerate metric at {point:?}")]
    DegenerateMetric { point: V4 },
    #[error("metric is not symmetric at {point:?}")]
    AsymmetricMetric { point: V4 },
    #[error("co-covariant derivative of rank {rank} fields is not supported (max 2)")]
    UnsupportedRank { rank: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("grid too small for curvature stencils: axis {coord:?} has {points} points")]
    Stencil { coord: Coord, points: usize },
    #[error("scale function must be positive, got {value} at {point:?}")]
    NonPositiveScale { point: V4, value: f64 },
    #[error("scale vector is not integrable: residual {residual:e} exceeds {tolerance:e}")]
    NotIntegrable { residual: f64, tolerance: f64 },
    #[error("scale factor inconsistent with scale vector: deviation {deviation:e} exceeds {tolerance:e}")]
    InconsistentScaleFactor { deviation: f64, tolerance: f64 },
    #[error("field has wrong shape: {0}")]
    Shape(String),
}

/// Metric tensor description.
#[derive(Clone)]
pub enum MetricSource {
    /// Same components everywhere.
    Constant(M4),
    /// Covariant rank-2 co-field of power +2 sampled on the grid.
    Sampled(CoField),
    /// Exact metric with first and second derivatives.
    Analytic(MetricFn),
}

/// Scale vector description.
#[derive(Clone)]
pub enum ScaleSource {
    /// Covariant vector sampled on the grid.
    Vector(CoField),
    /// Scale factor `b` sampled on the grid, `k = -∇b / b`.
    Factor(CoField),
    AnalyticVector(CovectorFn),
    AnalyticFactor(ScalarFn),
}

/// Everything the connection and curvature need at one point.
#[derive(Debug, Clone, Copy)]
pub struct PointJet {
    pub g: M4,
    pub dg: T3,
    pub ddg: T4,
    pub k: V4,
    pub dk: M4,
}

#[derive(Clone)]
pub struct WeylStructure {
    grid: GridSpec,
    metric: MetricSource,
    scale: ScaleSource,
    b: Option<CoField>,
    integrable: bool,
    b_floor: f64,
}

impl std::fmt::Debug for WeylStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WeylStructure")
            .field("grid", &self.grid.describe())
            .field("integrable", &self.integrable)
            .field("b_floor", &self.b_floor)
            .finish_non_exhaustive()
    }
}

fn check_shape(f: &CoField, grid: &GridSpec, slots: &[Variance], what: &str) -> Result<(), GeometryError> {
    if f.grid() != grid {
        return Err(GeometryError::GridMismatch);
    }
    if f.slots() != slots {
        return Err(GeometryError::Shape(format!("{what} must have slots {slots:?}, got {:?}", f.slots())));
    }
    Ok(())
}

impl WeylStructure {
    pub fn new(grid: &GridSpec, metric: MetricSource, scale: ScaleSource) -> Result<Self, GeometryError> {
        match &metric {
            MetricSource::Sampled(g) => {
                check_shape(g, grid, &[Variance::Down, Variance::Down], "metric")?;
                for i in 0..grid.len() {
                    for a in 0..4 {
                        for b in 0..a {
                            let (x, y) = (g.value(&[a, b], i), g.value(&[b, a], i));
                            if (x - y).abs() > 1e-12 * (x.abs() + y.abs()).max(1.0) {
                                return Err(GeometryError::AsymmetricMetric { point: grid.point(i) });
                            }
                        }
                    }
                }
            }
            MetricSource::Constant(m) => {
                for a in 0..4 {
                    for b in 0..a {
                        if m[a][b] != m[b][a] {
                            return Err(GeometryError::AsymmetricMetric { point: [0.0; 4] });
                        }
                    }
                }
            }
            MetricSource::Analytic(_) => {}
        }
        let integrable = match &scale {
            ScaleSource::Vector(k) => {
                check_shape(k, grid, &[Variance::Down], "scale vector")?;
                false
            }
            ScaleSource::Factor(b) => {
                check_shape(b, grid, &[], "scale factor")?;
                true
            }
            ScaleSource::AnalyticVector(_) => false,
            ScaleSource::AnalyticFactor(_) => true,
        };
        Ok(Self { grid: grid.clone(), metric, scale, b: None, integrable, b_floor: DEFAULT_B_FLOOR })
    }

    /// Flat metric with vanishing scale vector.
    pub fn flat(grid: &GridSpec) -> Self {
        Self::new(grid, MetricSource::Constant(MINKOWSKI), ScaleSource::Vector(CoField::zeros(grid, vec![Variance::Down], 0)))
            .expect("flat structure is valid")
            .assume_integrable()
    }

    /// Flat metric with a sampled scale factor.
    pub fn flat_with_factor(grid: &GridSpec, b: Vec<f64>) -> Result<Self, GeometryError> {
        let b = CoField::scalar(grid, -1, b)?;
        Self::new(grid, MetricSource::Constant(MINKOWSKI), ScaleSource::Factor(b))
    }

    pub fn with_b_floor(mut self, floor: f64) -> Self {
        self.b_floor = floor;
        self
    }

    fn assume_integrable(mut self) -> Self {
        self.integrable = true;
        self
    }

    /// Set the integrable flag after checking the closure residual.
    pub fn mark_integrable(mut self, tolerance: f64) -> Result<Self, GeometryError> {
        let residual = integrability_residual(&self)?;
        if residual > tolerance {
            return Err(GeometryError::NotIntegrable { residual, tolerance });
        }
        self.integrable = true;
        Ok(self)
    }

    /// Attach a scale factor to a structure defined by its scale vector,
    /// checking `k = -∇b / b` pointwise.
    pub fn attach_scale_factor(mut self, b: CoField, tolerance: f64) -> Result<Self, GeometryError> {
        check_shape(&b, &self.grid, &[], "scale factor")?;
        let vals = b.values();
        let mut deviation: f64 = 0.0;
        for i in 0..self.grid.len() {
            if vals[i] <= self.b_floor {
                continue;
            }
            let k = self.jet(i).k;
            for c in Coord::ALL {
                let expect = -self.grid.d1(vals, i, c) / vals[i];
                deviation = deviation.max((k[c.index()] - expect).abs());
            }
        }
        if deviation > tolerance {
            return Err(GeometryError::InconsistentScaleFactor { deviation, tolerance });
        }
        self.b = Some(b.with_power(-1));
        Ok(self)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn metric(&self) -> &MetricSource {
        &self.metric
    }

    pub fn scale(&self) -> &ScaleSource {
        &self.scale
    }

    pub fn is_integrable(&self) -> bool {
        self.integrable
    }

    pub fn b_floor(&self) -> f64 {
        self.b_floor
    }

    /// Scale factor sampled on the grid, when the structure has one.
    pub fn scale_factor(&self) -> Option<CoField> {
        match &self.scale {
            ScaleSource::Factor(b) => Some(b.clone()),
            ScaleSource::AnalyticFactor(b) => Some(CoField::scalar_from_fn(&self.grid, -1, |x| b.jet(x).value)),
            _ => self.b.clone(),
        }
    }

    /// Points where the scale factor is at or below the floor.
    pub fn rejected(&self) -> Vec<bool> {
        match self.scale_factor() {
            Some(b) => b.values().iter().map(|&v| !(v > self.b_floor)).collect(),
            None => vec![false; self.grid.len()],
        }
    }

    /// Metric sampled on the grid as a covariant co-field of power +2.
    pub fn sampled_metric(&self) -> CoField {
        let slots = [Variance::Down, Variance::Down];
        match &self.metric {
            MetricSource::Sampled(g) => g.clone(),
            MetricSource::Constant(m) => CoField::tensor_from_fn(&self.grid, slots, 2, |_| *m),
            MetricSource::Analytic(f) => CoField::tensor_from_fn(&self.grid, slots, 2, |x| f.jet(x).g),
        }
    }

    /// Scale vector sampled on the grid.
    pub fn sampled_scale_vector(&self) -> CoField {
        match &self.scale {
            ScaleSource::Vector(k) => k.clone(),
            _ => {
                let mut k = CoField::zeros(&self.grid, vec![Variance::Down], 0);
                for i in 0..self.grid.len() {
                    let j = self.jet(i).k;
                    for c in 0..4 {
                        k.component_mut(&[c])[i] = j[c];
                    }
                }
                k
            }
        }
    }

    fn metric_jet(&self, i: usize) -> MetricJet {
        match &self.metric {
            MetricSource::Constant(m) => MetricJet::constant(*m),
            MetricSource::Analytic(f) => f.jet(&self.grid.point(i)),
            MetricSource::Sampled(g) => {
                let grid = &self.grid;
                let mut out = MetricJet { g: ZERO_M4, dg: ZERO_T3, ddg: ZERO_T4 };
                for a in 0..4 {
                    for b in a..4 {
                        let comp = g.component(&[a, b]);
                        let v = comp[i];
                        let mut d = [0.0; 4];
                        let mut dd = ZERO_M4;
                        for c in Coord::ALL {
                            d[c.index()] = grid.d1(comp, i, c);
                            for e in Coord::ALL {
                                if e >= c {
                                    let val = grid.d2(comp, i, c, e);
                                    dd[c.index()][e.index()] = val;
                                    dd[e.index()][c.index()] = val;
                                }
                            }
                        }
                        for (x, y) in [(a, b), (b, a)] {
                            out.g[x][y] = v;
                            out.dg[x][y] = d;
                            out.ddg[x][y] = dd;
                        }
                    }
                }
                out
            }
        }
    }

    fn scale_jet(&self, i: usize) -> CovectorJet {
        let nan = CovectorJet { k: [f64::NAN; 4], dk: [[f64::NAN; 4]; 4] };
        match &self.scale {
            ScaleSource::Vector(k) => {
                let mut out = CovectorJet::zero();
                for a in 0..4 {
                    let comp = k.component(&[a]);
                    out.k[a] = comp[i];
                    for c in Coord::ALL {
                        out.dk[a][c.index()] = self.grid.d1(comp, i, c);
                    }
                }
                out
            }
            ScaleSource::AnalyticVector(f) => f.jet(&self.grid.point(i)),
            ScaleSource::AnalyticFactor(f) => {
                let j = f.jet(&self.grid.point(i));
                if !(j.value > self.b_floor) {
                    return nan;
                }
                j.log_gradient().neg()
            }
            ScaleSource::Factor(b) => {
                let vals = b.values();
                let v = vals[i];
                if !(v > self.b_floor) {
                    return nan;
                }
                let mut grad = [0.0; 4];
                let mut hess = ZERO_M4;
                for c in Coord::ALL {
                    grad[c.index()] = self.grid.d1(vals, i, c);
                    for e in Coord::ALL {
                        hess[c.index()][e.index()] = self.grid.d2(vals, i, c, e);
                    }
                }
                ScalarJet::new(v, grad, hess).log_gradient().neg()
            }
        }
    }

    /// Metric and scale-vector jet at grid point `i`. Rejected points carry NaN.
    pub fn jet(&self, i: usize) -> PointJet {
        let m = self.metric_jet(i);
        let s = self.scale_jet(i);
        PointJet { g: m.g, dg: m.dg, ddg: m.ddg, k: s.k, dk: s.dk }
    }

    pub(crate) fn jets(&self) -> Vec<PointJet> {
        (0..self.grid.len()).into_par_iter().map(|i| self.jet(i)).collect()
    }

    /// Curvature needs second-derivative stencils on every resolved axis.
    pub(crate) fn check_stencils(&self) -> Result<(), GeometryError> {
        for a in self.grid.axes() {
            if a.points < crate::grid::MIN_POINTS {
                return Err(GeometryError::Stencil { coord: a.coord, points: a.points });
            }
        }
        Ok(())
    }
}

/// Invert a 4x4 matrix with partial pivoting; `None` when singular.
pub(crate) fn invert4(m: &M4) -> Option<M4> {
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let piv = (col..4).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let p = a[col][col];
        for j in 0..4 {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for j in 0..4 {
                        a[r][j] -= f * a[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Axis, Boundary};

    #[test]
    fn inverse_of_minkowski_is_itself() {
        assert_eq!(invert4(&MINKOWSKI).unwrap(), MINKOWSKI);
        let mut singular = MINKOWSKI;
        singular[2][2] = 0.0;
        assert!(invert4(&singular).is_none());
    }

    #[test]
    fn inverse_of_general_matrix() {
        let m = [[2.0, 0.3, 0.0, 0.1], [0.3, -1.5, 0.2, 0.0], [0.0, 0.2, -1.0, 0.4], [0.1, 0.0, 0.4, -3.0]];
        let inv = invert4(&m).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let p: f64 = (0..4).map(|k| m[i][k] * inv[k][j]).sum();
                assert!((p - if i == j { 1.0 } else { 0.0 }).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn asymmetric_sampled_metric_rejected() {
        let g = GridSpec::new(vec![Axis::new(Coord::X, 0.0, 1.0, 5, Boundary::OneSided)]).unwrap();
        let mut m = MINKOWSKI;
        m[0][1] = 0.5;
        let metric = CoField::tensor_from_fn(&g, [Variance::Down, Variance::Down], 2, |_| m);
        let k = CoField::zeros(&g, vec![Variance::Down], 0);
        let e = WeylStructure::new(&g, MetricSource::Sampled(metric), ScaleSource::Vector(k)).unwrap_err();
        assert!(matches!(e, GeometryError::AsymmetricMetric { .. }));
    }

    #[test]
    fn factor_below_floor_is_rejected_pointwise() {
        let g = GridSpec::line(Coord::X, 0.0, 1.0, 6, Boundary::OneSided).unwrap();
        let w = WeylStructure::flat_with_factor(&g, vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let rej = w.rejected();
        assert_eq!(rej, vec![false, false, true, false, false, false]);
        assert!(w.jet(2).k[1].is_nan());
        assert!(w.jet(0).k[1].is_finite());
    }

    #[test]
    fn attach_factor_checks_consistency() {
        let g = GridSpec::line(Coord::X, 0.0, 1.0, 41, Boundary::OneSided).unwrap();
        let c = 0.7;
        let k = CoField::vector_from_fn(&g, Variance::Down, 0, |_| [0.0, -c, 0.0, 0.0]);
        let w = WeylStructure::new(&g, MetricSource::Constant(MINKOWSKI), ScaleSource::Vector(k)).unwrap();
        let good = CoField::scalar_from_fn(&g, -1, |p| (c * p[1]).exp());
        assert!(w.clone().attach_scale_factor(good, 1e-3).is_ok());
        let bad = CoField::scalar_from_fn(&g, -1, |p| (2.0 * c * p[1]).exp());
        assert!(matches!(w.attach_scale_factor(bad, 1e-3), Err(GeometryError::InconsistentScaleFactor { .. })));
    }
}
