use rayon::prelude::*;

use super::cofield::{CoField, Variance};
use super::connection::{geometries, PointGeometry};
use super::jet::{T3, T4, ZERO_T4};
use super::{GeometryError, WeylStructure};
use crate::grid::{GridSpec, M4};

/// Curvature data at one point.
///
/// The Ricci-type contractions follow the sign convention
/// `R^i_klm = Γ^i_kl,m - Γ^i_km,l + Γ^n_kl Γ^i_nm - Γ^n_km Γ^i_nl` with
/// `R_mn = R^k_mkn`, under which a flat metric with `k = -∇b/b` gives
/// `R = 6 □b / b`.
#[derive(Debug, Clone, Copy)]
pub struct PointCurvature {
    pub gamma: T3,
    pub christoffel: T3,
    /// First contraction, from its expanded form in `r_mn`, `k_{m;n}` and `k`.
    pub r1: M4,
    /// `r1 - 2 F`.
    pub r2: M4,
    /// Trace `R^l_lmn` of the full curvature tensor, computed independently.
    pub r3: M4,
    /// `F_mn = k_{n;m} - k_{m;n}`.
    pub f: M4,
    /// Riemannian Ricci tensor of `g` alone.
    pub ricci_riemannian: M4,
    /// `R = g^mn R1_mn`.
    pub scalar: f64,
    /// Riemannian scalar curvature `r`.
    pub riemannian_scalar: f64,
    /// `r - 6 k^l_;l + 6 k^l k_l`, the closed form of `R`.
    pub scalar_closed_form: f64,
}

fn riemann_from(gamma: &T3, d_gamma: &T4) -> T4 {
    let mut r = ZERO_T4;
    for i in 0..4 {
        for k in 0..4 {
            for l in 0..4 {
                for m in 0..4 {
                    let mut v = d_gamma[i][k][l][m] - d_gamma[i][k][m][l];
                    for n in 0..4 {
                        v += gamma[n][k][l] * gamma[i][n][m] - gamma[n][k][m] * gamma[i][n][l];
                    }
                    r[i][k][l][m] = v;
                }
            }
        }
    }
    r
}

fn contract_first_third(r: &T4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for m in 0..4 {
        for n in 0..4 {
            out[m][n] = (0..4).map(|k| r[k][m][k][n]).sum();
        }
    }
    out
}

fn trace_with(ginv: &M4, t: &M4) -> f64 {
    let mut s = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            s += ginv[a][b] * t[a][b];
        }
    }
    s
}

impl PointCurvature {
    pub fn from_geometry(p: &PointGeometry) -> Self {
        let riem_g = riemann_from(&p.christoffel, &p.d_christoffel);
        let ricci = contract_first_third(&riem_g);
        let riemannian_scalar = trace_with(&p.ginv, &ricci);

        // k_{m;n} = ∂_n k_m - γ^a_mn k_a
        let mut kcov = [[0.0; 4]; 4];
        for m in 0..4 {
            for n in 0..4 {
                kcov[m][n] = p.dk[m][n] - (0..4).map(|a| p.christoffel[a][m][n] * p.k[a]).sum::<f64>();
            }
        }
        let div_k = trace_with(&p.ginv, &kcov);
        let kk: f64 = (0..4).map(|a| p.k[a] * p.k_up[a]).sum();

        let mut r1 = [[0.0; 4]; 4];
        let mut f = [[0.0; 4]; 4];
        for m in 0..4 {
            for n in 0..4 {
                r1[m][n] = ricci[m][n] - 2.0 * (kcov[m][n] - kcov[n][m]) - (kcov[m][n] + kcov[n][m])
                    - p.g[m][n] * div_k
                    - 2.0 * p.k[m] * p.k[n]
                    + 2.0 * p.g[m][n] * kk;
                f[m][n] = kcov[n][m] - kcov[m][n];
            }
        }
        let mut r2 = r1;
        let mut r3 = [[0.0; 4]; 4];
        for m in 0..4 {
            for n in 0..4 {
                r2[m][n] -= 2.0 * f[m][n];
                let mut v = 0.0;
                for l in 0..4 {
                    v += p.d_gamma[l][l][m][n] - p.d_gamma[l][l][n][m];
                    for q in 0..4 {
                        v += p.gamma[q][l][m] * p.gamma[l][q][n] - p.gamma[q][l][n] * p.gamma[l][q][m];
                    }
                }
                r3[m][n] = v;
            }
        }
        Self {
            gamma: p.gamma,
            christoffel: p.christoffel,
            r1,
            r2,
            r3,
            f,
            ricci_riemannian: ricci,
            scalar: trace_with(&p.ginv, &r1),
            riemannian_scalar,
            scalar_closed_form: riemannian_scalar - 6.0 * div_k + 6.0 * kk,
        }
    }
}

/// Connection and curvature contractions at every grid point.
#[derive(Debug, Clone)]
pub struct CurvatureBundle {
    pub grid: GridSpec,
    pub points: Vec<PointCurvature>,
    pub(crate) ginv: Vec<M4>,
}

impl CurvatureBundle {
    /// Scalar curvature as a co-scalar of power -2.
    pub fn scalar(&self) -> CoField {
        CoField::scalar(&self.grid, -2, self.points.iter().map(|p| p.scalar).collect()).expect("grid length")
    }

    pub fn scalar_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.scalar).collect()
    }

    /// `R_mn` (first contraction) as a covariant in-tensor.
    pub fn ricci(&self) -> CoField {
        let pts = &self.points;
        CoField::tensor_from_fn(&self.grid, [Variance::Down, Variance::Down], 0, |_| [[0.0; 4]; 4]).filled(|i, a, b| pts[i].r1[a][b])
    }

    /// Mixed tensor `R^i_k = g^ia R_ak`, power -2.
    pub fn ricci_mixed(&self) -> CoField {
        let pts = &self.points;
        let ginv = &self.ginv;
        CoField::tensor_from_fn(&self.grid, [Variance::Up, Variance::Down], -2, |_| [[0.0; 4]; 4])
            .filled(|i, a, b| (0..4).map(|c| ginv[i][a][c] * pts[i].r1[c][b]).sum())
    }

    /// Largest pointwise value of `f(point)` over finite entries.
    pub fn max_over<F: Fn(&PointCurvature) -> f64>(&self, f: F) -> f64 {
        self.points.iter().map(f).filter(|v| v.is_finite()).fold(0.0, f64::max)
    }
}

trait Fill {
    fn filled<F: Fn(usize, usize, usize) -> f64>(self, f: F) -> Self;
}

impl Fill for CoField {
    fn filled<F: Fn(usize, usize, usize) -> f64>(mut self, f: F) -> Self {
        let n = self.grid().len();
        for a in 0..4 {
            for b in 0..4 {
                let comp = self.component_mut(&[a, b]);
                for (i, v) in comp.iter_mut().enumerate().take(n) {
                    *v = f(i, a, b);
                }
            }
        }
        self
    }
}

/// Full curvature bundle. Points whose scale factor is below the floor carry NaN.
pub fn curvature(w: &WeylStructure) -> Result<CurvatureBundle, GeometryError> {
    w.check_stencils()?;
    let geo = geometries(w)?;
    let points = geo.par_iter().map(PointCurvature::from_geometry).collect();
    Ok(CurvatureBundle { grid: w.grid().clone(), points, ginv: geo.iter().map(|g| g.ginv).collect() })
}

/// Scalar curvature only; cheaper than [`curvature`] on large space-time grids.
pub fn scalar_curvature(w: &WeylStructure) -> Result<CoField, GeometryError> {
    w.check_stencils()?;
    let grid = w.grid();
    let values: Result<Vec<f64>, GeometryError> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let j = w.jet(i);
            let p = PointGeometry::from_jet(&j).ok_or(GeometryError::DegenerateMetric { point: grid.point(i) })?;
            Ok(PointCurvature::from_geometry(&p).scalar)
        })
        .collect();
    CoField::scalar(grid, -2, values?)
}

/// Full curvature tensor `R^i_klm` at every point, indexed `[i][k][l][m]`.
pub fn riemann_tensor(w: &WeylStructure) -> Result<Vec<T4>, GeometryError> {
    w.check_stencils()?;
    let geo = geometries(w)?;
    Ok(geo.par_iter().map(|p| riemann_from(&p.gamma, &p.d_gamma)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::jet::{conformally_flat, ScalarJet, MINKOWSKI, ZERO_M4};
    use crate::geometry::{MetricSource, ScaleSource};
    use crate::grid::{Axis, Boundary, Coord, V4};
    use std::sync::Arc;

    fn x_grid(n: usize, half: f64) -> GridSpec {
        GridSpec::line(Coord::X, -half, half, n, Boundary::OneSided).unwrap()
    }

    #[test]
    fn flat_space_is_flat() {
        let grid = GridSpec::new(vec![
            Axis::new(Coord::T, 0.0, 1.0, 5, Boundary::OneSided),
            Axis::new(Coord::X, 0.0, 1.0, 6, Boundary::OneSided),
        ])
        .unwrap();
        let b = curvature(&WeylStructure::flat(&grid)).unwrap();
        assert_eq!(b.max_over(|p| p.scalar.abs()), 0.0);
        assert_eq!(b.max_over(|p| p.r1.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))), 0.0);
    }

    #[test]
    fn stencil_error_on_small_grid() {
        let axes = vec![Axis::new(Coord::X, 0.0, 1.0, 4, Boundary::OneSided)];
        let grid = GridSpec::with_min_points(axes, 3).unwrap();
        let e = curvature(&WeylStructure::flat(&grid)).unwrap_err();
        assert!(matches!(e, GeometryError::Stencil { points: 4, .. }));
    }

    fn cos_factor() -> ScaleSource {
        ScaleSource::AnalyticFactor(Arc::new(|p: &V4| {
            let (s, c) = p[1].sin_cos();
            let mut hess = ZERO_M4;
            hess[1][1] = -c;
            ScalarJet::new(c, [0.0, -s, 0.0, 0.0], hess)
        }))
    }

    /// b = cos x: □b/b = -b_xx/b = 1, so R = 6 everywhere.
    #[test]
    fn analytic_cos_factor_gives_six() {
        let w = WeylStructure::new(&x_grid(9, 1.0), MetricSource::Constant(MINKOWSKI), cos_factor()).unwrap();
        let b = curvature(&w).unwrap();
        for p in &b.points {
            assert!((p.scalar - 6.0).abs() < 1e-12, "{}", p.scalar);
            assert!((p.scalar_closed_form - 6.0).abs() < 1e-12);
        }
    }

    /// Expanded first contraction agrees with contracting the full tensor,
    /// and the trace contraction equals 4F, on a non-integrable, conformally
    /// curved structure.
    #[test]
    fn contractions_agree_with_full_tensor() {
        let grid = GridSpec::new(vec![
            Axis::new(Coord::T, 0.0, 0.5, 5, Boundary::OneSided),
            Axis::new(Coord::X, -0.5, 0.5, 5, Boundary::OneSided),
            Axis::new(Coord::Y, -0.5, 0.5, 5, Boundary::OneSided),
        ])
        .unwrap();
        let omega = Arc::new(|p: &V4| {
            let v = 1.0 + 0.3 * p[1] * p[2] + 0.2 * p[0] * p[0];
            let mut hess = ZERO_M4;
            hess[1][2] = 0.3;
            hess[2][1] = 0.3;
            hess[0][0] = 0.4;
            ScalarJet::new(v, [0.4 * p[0], 0.3 * p[2], 0.3 * p[1], 0.0], hess)
        });
        let k = Arc::new(|p: &V4| {
            let mut dk = ZERO_M4;
            dk[1][2] = -1.0; // k_x = -y
            dk[2][1] = 1.0; // k_y = x
            dk[0][1] = 0.5; // k_t = 0.5 x
            super::super::CovectorJet { k: [0.5 * p[1], -p[2], p[1], 0.1], dk }
        });
        let w = WeylStructure::new(&grid, MetricSource::Analytic(conformally_flat(omega)), ScaleSource::AnalyticVector(k)).unwrap();
        let bundle = curvature(&w).unwrap();
        let full = riemann_tensor(&w).unwrap();
        for (p, r) in bundle.points.iter().zip(&full) {
            let contracted = contract_first_third(r);
            for m in 0..4 {
                for n in 0..4 {
                    assert!((contracted[m][n] - p.r1[m][n]).abs() < 1e-11, "R1 {m}{n}");
                    assert!((p.r3[m][n] - 4.0 * p.f[m][n]).abs() < 1e-11, "R3 {m}{n}");
                }
            }
            assert!((p.scalar - p.scalar_closed_form).abs() < 1e-10);
        }
        // F is non-zero here: k_y,x - k_x,y = 2 in the x-y block
        assert!((bundle.points[0].f[1][2] - 2.0).abs() < 1e-9 * 1e3);
    }
}
