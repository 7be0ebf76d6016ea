use std::sync::Arc;

use super::cofield::{CoField, Variance};
use super::jet::{MetricJet, ScalarFn, ScalarJet};
use super::{GeometryError, MetricSource, ScaleSource, WeylStructure};
use crate::grid::{Coord, GridSpec, V4};

/// Positive gauge function `λ(x)` for a scale transformation.
#[derive(Clone)]
pub enum ScaleFunction {
    /// Values on the grid; derivatives come from finite differences.
    Sampled(Vec<f64>),
    /// Exact value, gradient and Hessian.
    Analytic(ScalarFn),
}

impl ScaleFunction {
    pub fn constant(value: f64) -> Self {
        ScaleFunction::Analytic(Arc::new(move |_: &V4| ScalarJet::constant(value)))
    }

    fn values(&self, grid: &GridSpec) -> Result<Vec<f64>, GeometryError> {
        let vals = match self {
            ScaleFunction::Sampled(v) => {
                grid.check_len(v.len())?;
                v.clone()
            }
            ScaleFunction::Analytic(f) => grid.sample(|x| f.jet(x).value),
        };
        if let Some(i) = vals.iter().position(|&l| !(l > 0.0)) {
            return Err(GeometryError::NonPositiveScale { point: grid.point(i), value: vals[i] });
        }
        Ok(vals)
    }
}

fn sampled_log_gradient(grid: &GridSpec, lambda: &[f64]) -> Vec<V4> {
    let ln: Vec<f64> = lambda.iter().map(|v| v.ln()).collect();
    (0..grid.len())
        .map(|i| {
            let mut d = [0.0; 4];
            for c in Coord::ALL {
                d[c.index()] = grid.d1(&ln, i, c);
            }
            d
        })
        .collect()
}

/// Apply `g -> λ² g`, `k -> k + ∇ln λ`, `b -> b / λ`.
///
/// With an analytic `λ` and analytic (or constant) inputs the result stays
/// analytic, so connection and curvature are compared without differencing
/// error. Any sampled ingredient makes the corresponding output sampled.
pub fn scale_transform(w: &WeylStructure, lambda: &ScaleFunction) -> Result<WeylStructure, GeometryError> {
    let grid = w.grid();
    let lam = lambda.values(grid)?;

    let metric = match (w.metric(), lambda) {
        (MetricSource::Constant(g0), ScaleFunction::Analytic(f)) => {
            let (f, g0) = (f.clone(), *g0);
            MetricSource::Analytic(Arc::new(move |x: &V4| {
                let l = f.jet(x);
                MetricJet::scalar_times(&l.mul(&l), &g0)
            }))
        }
        (MetricSource::Analytic(m), ScaleFunction::Analytic(f)) => {
            let (f, m) = (f.clone(), m.clone());
            MetricSource::Analytic(Arc::new(move |x: &V4| {
                let l = f.jet(x);
                m.jet(x).scaled_by(&l.mul(&l))
            }))
        }
        _ => MetricSource::Sampled(scale_transform_field(&w.sampled_metric(), lambda)?),
    };

    let scale = match (w.scale(), lambda) {
        (ScaleSource::AnalyticFactor(b), ScaleFunction::Analytic(f)) => {
            let (b, f) = (b.clone(), f.clone());
            ScaleSource::AnalyticFactor(Arc::new(move |x: &V4| b.jet(x).mul(&f.jet(x).recip())))
        }
        (ScaleSource::AnalyticVector(k), ScaleFunction::Analytic(f)) => {
            let (k, f) = (k.clone(), f.clone());
            ScaleSource::AnalyticVector(Arc::new(move |x: &V4| k.jet(x).add(&f.jet(x).log_gradient())))
        }
        (ScaleSource::Factor(_), _) | (ScaleSource::AnalyticFactor(_), ScaleFunction::Sampled(_)) => {
            let b = match w.scale() {
                ScaleSource::Factor(b) => b.clone(),
                _ => w.scale_factor().expect("analytic factor samples"),
            };
            ScaleSource::Factor(scale_transform_field(&b, lambda)?)
        }
        _ => {
            let grad: Vec<V4> = match lambda {
                ScaleFunction::Analytic(f) => (0..grid.len()).map(|i| f.jet(&grid.point(i)).log_gradient().k).collect(),
                ScaleFunction::Sampled(_) => sampled_log_gradient(grid, &lam),
            };
            let k = w.sampled_scale_vector();
            let mut shifted = CoField::zeros(grid, vec![Variance::Down], 0);
            for c in 0..4 {
                let src = k.component(&[c]);
                let dst = shifted.component_mut(&[c]);
                for i in 0..grid.len() {
                    dst[i] = src[i] + grad[i][c];
                }
            }
            ScaleSource::Vector(shifted)
        }
    };

    let mut out = WeylStructure::new(grid, metric, scale)?.with_b_floor(w.b_floor());
    if w.is_integrable() {
        out.integrable = true;
    }
    if let (Some(b), None) = (w.b.as_ref(), out.b.as_ref()) {
        if !matches!(out.scale(), ScaleSource::Factor(_) | ScaleSource::AnalyticFactor(_)) {
            out.b = Some(b.rescaled(&lam)?);
        }
    }
    Ok(out)
}

/// Multiply a co-field by `λ^n` pointwise, `n` being its power.
pub fn scale_transform_field(f: &CoField, lambda: &ScaleFunction) -> Result<CoField, GeometryError> {
    let lam = lambda.values(f.grid())?;
    f.rescaled(&lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::jet::exponential_jet;
    use crate::geometry::{curvature, weyl_connection, MINKOWSKI};
    use crate::grid::{Axis, Boundary};

    fn grid() -> GridSpec {
        GridSpec::new(vec![
            Axis::new(Coord::T, 0.0, 0.4, 5, Boundary::OneSided),
            Axis::new(Coord::X, -0.5, 0.5, 9, Boundary::OneSided),
        ])
        .unwrap()
    }

    fn wavy_factor() -> ScalarFn {
        Arc::new(|x: &V4| {
            let (s, c) = x[1].sin_cos();
            let v = 1.0 + 0.1 * s + 0.05 * x[0] * x[0];
            let mut hess = [[0.0; 4]; 4];
            hess[1][1] = -0.1 * s;
            hess[0][0] = 0.1;
            ScalarJet::new(v, [0.1 * x[0], 0.1 * c, 0.0, 0.0], hess)
        })
    }

    #[test]
    fn unit_lambda_is_identity() {
        let g = grid();
        let w = WeylStructure::new(&g, MetricSource::Constant(MINKOWSKI), ScaleSource::AnalyticFactor(wavy_factor())).unwrap();
        let t = scale_transform(&w, &ScaleFunction::constant(1.0)).unwrap();
        for i in 0..g.len() {
            let (a, b) = (w.jet(i), t.jet(i));
            assert_eq!(a.g, b.g);
            assert_eq!(a.k, b.k);
        }
    }

    #[test]
    fn constant_lambda_scales_g_and_b_only() {
        let g = grid();
        let w = WeylStructure::new(&g, MetricSource::Constant(MINKOWSKI), ScaleSource::AnalyticFactor(wavy_factor())).unwrap();
        let t = scale_transform(&w, &ScaleFunction::constant(2.0)).unwrap();
        let (b0, b1) = (w.scale_factor().unwrap(), t.scale_factor().unwrap());
        for i in 0..g.len() {
            assert!((b1.values()[i] - 0.5 * b0.values()[i]).abs() < 1e-15);
            let (a, b) = (w.jet(i), t.jet(i));
            assert_eq!(b.g[1][1], 4.0 * a.g[1][1]);
            for c in 0..4 {
                assert!((a.k[c] - b.k[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn non_positive_lambda_rejected() {
        let g = grid();
        let mut lam = vec![1.0; g.len()];
        lam[7] = -0.5;
        let e = scale_transform(&WeylStructure::flat(&g), &ScaleFunction::Sampled(lam)).unwrap_err();
        assert!(matches!(e, GeometryError::NonPositiveScale { value, .. } if value == -0.5));
    }

    #[test]
    fn connection_invariant_under_analytic_lambda() {
        let g = grid();
        let w = WeylStructure::new(&g, MetricSource::Constant(MINKOWSKI), ScaleSource::AnalyticFactor(wavy_factor())).unwrap();
        let lam = ScaleFunction::Analytic(Arc::new(|x: &V4| exponential_jet([0.3, 1.0, 0.0, 0.0], x)));
        let t = scale_transform(&w, &lam).unwrap();
        let (a, b) = (weyl_connection(&w).unwrap(), weyl_connection(&t).unwrap());
        let scale = a.max_abs().max(1.0);
        for (x, y) in a.gamma.iter().zip(&b.gamma) {
            for (p, q) in x.iter().flatten().flatten().zip(y.iter().flatten().flatten()) {
                assert!((p - q).abs() <= 1e-12 * scale, "{p} vs {q}");
            }
        }
        let (ra, rb) = (curvature(&w).unwrap(), curvature(&t).unwrap());
        for (i, (p, q)) in ra.points.iter().zip(&rb.points).enumerate() {
            let l = (0.3 * g.point(i)[0] + g.point(i)[1]).exp();
            assert!((q.scalar - p.scalar / (l * l)).abs() < 1e-10 * p.scalar.abs().max(1.0));
        }
    }
}
