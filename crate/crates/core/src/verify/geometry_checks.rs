use std::sync::Arc;

use super::analytic::{central, fitted_wavenumber, product_jet, template_grid, Profile};
use super::{require_order, CheckOutcome, Criterion, VerifyError, SECOND_ORDER_BAND};
use crate::geometry::jet::{conformally_flat, gradient_of, ScalarFn};
use crate::geometry::{
    bianchi_residual, metricity_residual, scalar_curvature, scale_transform, weyl_connection, CoField, MetricSource,
    ScaleFunction, ScaleSource, WeylStructure, MINKOWSKI,
};
use crate::grid::{Axis, Coord, GridSpec};
use crate::wave::k_field_residual;

/// Ratio band required of the curvature identity.
pub const CURVATURE_BAND: (f64, f64) = (3.6, 4.4);

fn profiles(coords: &[(Coord, Profile)]) -> [Profile; 4] {
    let mut f = [Profile::One; 4];
    for &(c, p) in coords {
        f[c.index()] = p;
    }
    f
}

fn scalar_fn(base: f64, amp: f64, f: [Profile; 4]) -> ScalarFn {
    Arc::new(move |x: &crate::grid::V4| product_jet(base, amp, &f, x))
}

fn max_central(grid: &GridSpec, err: impl Fn(usize) -> f64) -> f64 {
    (0..grid.len()).filter(|&i| central(grid, i)).map(err).fold(0.0, f64::max)
}

/// Max error of the computed scalar curvature against `6 □b / b` for a
/// sampled `b` on one grid.
fn curvature_error(grid: &GridSpec, f: [Profile; 4]) -> Result<f64, VerifyError> {
    let b = grid.sample(|x| product_jet(2.0, 0.5, &f, x).value);
    let r = scalar_curvature(&WeylStructure::flat_with_factor(grid, b)?)?;
    Ok(max_central(grid, |i| {
        let j = product_jet(2.0, 0.5, &f, &grid.point(i));
        let boxb = j.hess[0][0] - j.hess[1][1] - j.hess[2][2] - j.hess[3][3];
        (r.values()[i] - 6.0 * boxb / j.value).abs()
    }))
}

/// Scalar curvature of a flat metric with a sampled scale factor against the
/// closed form `6 □b / b`, on `x`, `(x, y)` and `(t, x)` grids shaped like
/// `template`, at two resolutions.
pub fn curvature_identity(template: &Axis) -> Result<CheckOutcome, VerifyError> {
    let k = fitted_wavenumber(template);
    let mut out = CheckOutcome::new(Criterion::CurvatureIdentity);
    let cases: [(&str, Vec<(Coord, Profile)>); 3] = [
        ("x", vec![(Coord::X, Profile::Sin(k))]),
        ("xy", vec![(Coord::X, Profile::Sin(k)), (Coord::Y, Profile::Cos(k))]),
        ("tx", vec![(Coord::T, Profile::Cos(2.0 * k)), (Coord::X, Profile::Sin(k))]),
    ];
    for (name, spec) in cases {
        let coords: Vec<Coord> = spec.iter().map(|p| p.0).collect();
        let grid = template_grid(template, &coords)?;
        let f = profiles(&spec);
        let coarse = curvature_error(&grid, f)?;
        let fine = curvature_error(&grid.refined(), f)?;
        let h = grid.min_spacing();
        out.metric(format!("{name}.c_h2"), coarse / (h * h));
        require_order(&mut out, name, coarse, fine, CURVATURE_BAND);
    }
    Ok(out)
}

/// Weyl connection before and after an analytic gauge change, and the
/// `λ⁻²` rescaling of the scalar curvature with sampled inputs.
pub fn scale_invariance(template: &Axis) -> Result<CheckOutcome, VerifyError> {
    let k = fitted_wavenumber(template);
    let grid = template_grid(template, &[Coord::X, Coord::Y])?;
    let fb = profiles(&[(Coord::X, Profile::Sin(k)), (Coord::Y, Profile::Cos(k))]);
    let fl = profiles(&[(Coord::X, Profile::Cos(k)), (Coord::Y, Profile::Sin(k))]);
    let lambda_at = move |x: &crate::grid::V4| product_jet(1.5, 0.4, &fl, x).value;
    let mut out = CheckOutcome::new(Criterion::ScaleInvariance);

    let w = WeylStructure::new(&grid, MetricSource::Constant(MINKOWSKI), ScaleSource::AnalyticFactor(scalar_fn(2.0, 0.5, fb)))?;
    let wt = scale_transform(&w, &ScaleFunction::Analytic(scalar_fn(1.5, 0.4, fl)))?;
    let (g0, g1) = (weyl_connection(&w)?, weyl_connection(&wt)?);
    let mut diff: f64 = 0.0;
    for (a, b) in g0.gamma.iter().zip(&g1.gamma) {
        for (x, y) in a.iter().flatten().flatten().zip(b.iter().flatten().flatten()) {
            diff = diff.max((x - y).abs());
        }
    }
    let rel = diff / g0.max_abs();
    out.require("gamma.relative_change", rel, rel <= 1e-12, "≤ 1e-12");

    let (r0, r1) = (scalar_curvature(&w)?, scalar_curvature(&wt)?);
    let rmax = r0.max_abs();
    let rel_r = (0..grid.len())
        .map(|i| {
            let l = lambda_at(&grid.point(i));
            (r1.values()[i] - r0.values()[i] / (l * l)).abs() / rmax
        })
        .fold(0.0, f64::max);
    out.require("r.analytic_relative", rel_r, rel_r <= 1e-10, "≤ 1e-10");

    let sampled = |g: &GridSpec| -> Result<f64, VerifyError> {
        let b = g.sample(|x| product_jet(2.0, 0.5, &fb, x).value);
        let lam = g.sample(lambda_at);
        let w = WeylStructure::flat_with_factor(g, b)?;
        let wt = scale_transform(&w, &ScaleFunction::Sampled(lam.clone()))?;
        let (r0, r1) = (scalar_curvature(&w)?, scalar_curvature(&wt)?);
        Ok(max_central(g, |i| (r1.values()[i] - r0.values()[i] / (lam[i] * lam[i])).abs()))
    };
    let coarse = sampled(&grid)?;
    let fine = sampled(&grid.refined())?;
    require_order(&mut out, "r.sampled", coarse, fine, SECOND_ORDER_BAND);
    Ok(out)
}

type Builder = Box<dyn Fn(&GridSpec) -> Result<WeylStructure, VerifyError>>;

/// The three integrable test structures, as builders over a grid.
fn test_structures(k: f64) -> Vec<(&'static str, Builder)> {
    let fb = profiles(&[(Coord::X, Profile::Sin(k)), (Coord::Y, Profile::Cos(k))]);
    let fo = profiles(&[(Coord::X, Profile::Cos(k)), (Coord::Y, Profile::Cos(k))]);
    let fp = profiles(&[(Coord::X, Profile::Sin(k)), (Coord::Y, Profile::Sin(k))]);
    vec![
        (
            "flat_factor",
            Box::new(move |g: &GridSpec| {
                Ok(WeylStructure::new(g, MetricSource::Constant(MINKOWSKI), ScaleSource::AnalyticFactor(scalar_fn(2.0, 0.5, fb)))?)
            }),
        ),
        (
            "conformal_factor",
            Box::new(move |g: &GridSpec| {
                Ok(WeylStructure::new(
                    g,
                    MetricSource::Analytic(conformally_flat(scalar_fn(1.0, 0.2, fo))),
                    ScaleSource::AnalyticFactor(scalar_fn(2.0, 0.5, fb)),
                )?)
            }),
        ),
        (
            "conformal_gradient",
            Box::new(move |g: &GridSpec| {
                Ok(WeylStructure::new(
                    g,
                    MetricSource::Analytic(conformally_flat(scalar_fn(1.0, -0.15, fb))),
                    ScaleSource::AnalyticVector(gradient_of(scalar_fn(0.0, 0.3, fp))),
                )?
                .mark_integrable(1e-9)?)
            }),
        ),
    ]
}

/// Contracted Bianchi identity and metricity residuals on three analytic
/// integrable structures at two resolutions.
pub fn geometric_identities(template: &Axis) -> Result<CheckOutcome, VerifyError> {
    let grid = template_grid(template, &[Coord::X, Coord::Y])?;
    let fine_grid = grid.refined();
    let mut out = CheckOutcome::new(Criterion::GeometricIdentities);
    for (name, build) in test_structures(fitted_wavenumber(template)) {
        let (wc, wf) = (build(&grid)?, build(&fine_grid)?);
        require_order(&mut out, &format!("{name}.bianchi"), bianchi_residual(&wc)?, bianchi_residual(&wf)?, SECOND_ORDER_BAND);
        require_order(&mut out, &format!("{name}.metricity"), metricity_residual(&wc)?, metricity_residual(&wf)?, SECOND_ORDER_BAND);
    }
    Ok(out)
}

/// Relative threshold separating a satisfied k-field equation from a
/// violated one.
pub const K_FIELD_THRESHOLD: f64 = 1e-2;

/// k-field equation for `ρ = b²` with `k = -∇b/b` (second order in `h`) and
/// for the control `ρ = b³`, which must exceed the threshold.
pub fn k_field(template: &Axis) -> Result<CheckOutcome, VerifyError> {
    let k = fitted_wavenumber(template);
    let f = profiles(&[(Coord::X, Profile::Sin(k)), (Coord::Y, Profile::Cos(k))]);
    let grid = template_grid(template, &[Coord::X, Coord::Y])?;
    let mut out = CheckOutcome::new(Criterion::KField);
    let residual = |g: &GridSpec, power: i32| -> Result<(f64, f64, f64), VerifyError> {
        let b = g.sample(|x| product_jet(2.0, 0.5, &f, x).value);
        let rho: Vec<f64> = b.iter().map(|v| v.powi(power)).collect();
        let scale = g.gradient(&rho).iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let w = WeylStructure::flat_with_factor(g, b)?;
        let r = k_field_residual(&CoField::scalar(g, -2, rho)?, &w)?;
        Ok((r.first_order / scale, r.corollary, scale))
    };
    let (coarse, corollary, _) = residual(&grid, 2)?;
    let (fine, _, _) = residual(&grid.refined(), 2)?;
    require_order(&mut out, "rho_b2.relative", coarse, fine, SECOND_ORDER_BAND);
    out.require("rho_b2.below_threshold", coarse, coarse < K_FIELD_THRESHOLD, &format!("< {K_FIELD_THRESHOLD}"));
    out.metric("rho_b2.corollary", corollary);
    let (control, _, _) = residual(&grid, 3)?;
    out.require("rho_b3.relative", control, control > K_FIELD_THRESHOLD, &format!("> {K_FIELD_THRESHOLD}"));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    fn template(points: usize, boundary: Boundary) -> Axis {
        Axis::new(Coord::X, 0.0, 6.0, points, boundary)
    }

    #[test]
    fn curvature_identity_is_second_order() {
        let o = curvature_identity(&template(32, Boundary::Periodic)).unwrap();
        assert!(o.passed, "{}", o.summary());
    }

    #[test]
    fn geometry_checks_pass_on_periodic_grids() {
        let t = template(24, Boundary::Periodic);
        for o in [scale_invariance(&t).unwrap(), geometric_identities(&t).unwrap(), k_field(&t).unwrap()] {
            assert!(o.passed, "{:?}: {}", o.criterion, o.summary());
        }
    }
}
