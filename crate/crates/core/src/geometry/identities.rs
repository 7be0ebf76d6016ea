use super::cofield::{CoField, Variance};
use super::connection::{derivative_with, geometries};
use super::curvature::CurvatureBundle;
use super::{curvature, GeometryError, WeylStructure};
use crate::grid::{Coord, GridSpec};

/// Points this close to a non-periodic edge are left out of residuals that
/// difference already differenced quantities.
pub const INTERIOR_MARGIN: usize = 2;

fn curl_max(grid: &GridSpec, dk: impl Fn(usize, usize, usize) -> f64) -> f64 {
    let mut out: f64 = 0.0;
    for i in 0..grid.len() {
        for m in 0..4 {
            for n in (m + 1)..4 {
                let v = (dk(i, m, n) - dk(i, n, m)).abs();
                if v.is_finite() {
                    out = out.max(v);
                }
            }
        }
    }
    out
}

/// Max over the grid of `|k_{m,n} - k_{n,m}|`.
///
/// This equals the covariant curl because the connection is symmetric.
pub fn integrability_residual(w: &WeylStructure) -> Result<f64, GeometryError> {
    let jets = w.jets();
    Ok(curl_max(w.grid(), |i, m, n| jets[i].dk[m][n]))
}

/// Same check for a bare sampled covector.
pub fn integrability_residual_of(k: &CoField) -> Result<f64, GeometryError> {
    if k.slots() != [Variance::Down] {
        return Err(GeometryError::Shape(format!("scale vector must be one lower slot, got {:?}", k.slots())));
    }
    let grid = k.grid();
    let d: Vec<Vec<[f64; 4]>> = (0..4)
        .map(|m| {
            let comp = k.component(&[m]);
            (0..grid.len())
                .map(|i| {
                    let mut row = [0.0; 4];
                    for c in Coord::ALL {
                        row[c.index()] = grid.d1(comp, i, c);
                    }
                    row
                })
                .collect()
        })
        .collect();
    Ok(curl_max(grid, |i, m, n| d[m][i][n]))
}

/// Integrate `k_m = -b_,m / b` from `anchor` (a multi-index) with `b = value` there.
///
/// The path runs along whole grid axes in the default order, first axis first.
pub fn reconstruct_b(k: &CoField, anchor: &[usize], value: f64, tolerance: f64) -> Result<CoField, GeometryError> {
    let order: Vec<usize> = (0..k.grid().ndim()).collect();
    reconstruct_b_along(k, anchor, value, tolerance, &order)
}

/// [`reconstruct_b`] with an explicit axis order for the integration path.
pub fn reconstruct_b_along(
    k: &CoField,
    anchor: &[usize],
    value: f64,
    tolerance: f64,
    order: &[usize],
) -> Result<CoField, GeometryError> {
    let grid = k.grid();
    let nd = grid.ndim();
    if anchor.len() != nd || anchor.iter().zip(grid.shape()).any(|(&a, n)| a >= n) {
        return Err(GeometryError::Shape(format!("anchor {anchor:?} outside grid shape {:?}", grid.shape())));
    }
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..nd).collect::<Vec<_>>() {
        return Err(GeometryError::Shape(format!("axis order {order:?} is not a permutation of 0..{nd}")));
    }
    if !(value > 0.0) {
        return Err(GeometryError::NonPositiveScale { point: grid.point(grid.flat_index(anchor)), value });
    }
    let residual = integrability_residual_of(k)?;
    if residual > tolerance {
        return Err(GeometryError::NotIntegrable { residual, tolerance });
    }

    // ln b, filled axis by axis; a point is reached once every axis not yet
    // walked still sits at its anchor coordinate.
    let mut ln = vec![f64::NAN; grid.len()];
    ln[grid.flat_index(anchor)] = value.ln();
    let mut done = vec![false; nd];
    for &axis in order {
        let coord = grid.axes()[axis].coord;
        let kc = k.component(&[coord.index()]);
        let h = grid.spacing(axis);
        let a0 = anchor[axis];
        for start in 0..grid.len() {
            let mi = grid.multi_index(start);
            let on_line = (0..nd).all(|d| d == axis || done[d] || mi[d] == anchor[d]);
            if !on_line || mi[axis] != a0 {
                continue;
            }
            let mut prev = start;
            let mut cur = start;
            while let Some(next) = step(grid, cur, axis, 1) {
                ln[next] = ln[prev] - 0.5 * h * (kc[prev] + kc[next]);
                prev = next;
                cur = next;
            }
            let (mut prev, mut cur) = (start, start);
            while let Some(next) = step(grid, cur, axis, -1) {
                ln[next] = ln[prev] + 0.5 * h * (kc[prev] + kc[next]);
                prev = next;
                cur = next;
            }
        }
        done[axis] = true;
    }
    CoField::scalar(grid, -1, ln.into_iter().map(f64::exp).collect())
}

// Walk without wrapping, so periodic axes integrate over the open interval.
fn step(grid: &GridSpec, flat: usize, axis: usize, dir: isize) -> Option<usize> {
    let i = grid.axis_index(flat, axis) as isize + dir;
    if i < 0 || i >= grid.axes()[axis].points as isize {
        return None;
    }
    grid.neighbor(flat, axis, dir)
}

/// Max over the grid of `|g_{ik*l}|`.
pub fn metricity_residual(w: &WeylStructure) -> Result<f64, GeometryError> {
    let geo = geometries(w)?;
    let d = derivative_with(&w.sampled_metric(), &geo)?;
    Ok(d.raw().iter().filter(|v| v.is_finite()).fold(0.0, |m, v| m.max(v.abs())))
}

/// Max over interior points of `|R^i_{k*i} - ½ R_{*k}|`.
pub fn bianchi_residual(w: &WeylStructure) -> Result<f64, GeometryError> {
    if !w.is_integrable() {
        let residual = integrability_residual(w)?;
        return Err(GeometryError::NotIntegrable { residual, tolerance: 0.0 });
    }
    let bundle = curvature(w)?;
    bianchi_residual_with(w, &bundle)
}

pub(crate) fn bianchi_residual_with(w: &WeylStructure, bundle: &CurvatureBundle) -> Result<f64, GeometryError> {
    let geo = geometries(w)?;
    let grid = w.grid();
    let dric = derivative_with(&bundle.ricci_mixed(), &geo)?;
    let dr = derivative_with(&bundle.scalar(), &geo)?;
    let mut out: f64 = 0.0;
    for p in 0..grid.len() {
        if grid.edge_distance(p) < INTERIOR_MARGIN {
            continue;
        }
        for k in 0..4 {
            let div: f64 = (0..4).map(|i| dric.value(&[i, k, i], p)).sum();
            let v = (div - 0.5 * dr.value(&[k], p)).abs();
            if v.is_finite() {
                out = out.max(v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{MetricSource, ScaleSource, MINKOWSKI};
    use crate::grid::{Axis, Boundary};

    fn plane(n: usize) -> GridSpec {
        GridSpec::new(vec![
            Axis::new(Coord::X, -1.0, 1.0, n, Boundary::OneSided),
            Axis::new(Coord::Y, -1.0, 1.0, n, Boundary::OneSided),
        ])
        .unwrap()
    }

    #[test]
    fn rotational_field_has_curl_two() {
        let g = plane(9);
        let k = CoField::vector_from_fn(&g, Variance::Down, 0, |p| [0.0, -p[2], p[1], 0.0]);
        assert!((integrability_residual_of(&k).unwrap() - 2.0).abs() < 1e-12);
        let e = reconstruct_b(&k, &[4, 4], 1.0, 1e-6).unwrap_err();
        assert!(matches!(e, GeometryError::NotIntegrable { residual, .. } if (residual - 2.0).abs() < 1e-12));
    }

    #[test]
    fn zero_field() {
        let g = plane(7);
        let k = CoField::zeros(&g, vec![Variance::Down], 0);
        assert_eq!(integrability_residual_of(&k).unwrap(), 0.0);
        let b = reconstruct_b(&k, &[0, 3], 1.0, 0.0).unwrap();
        assert!(b.values().iter().all(|&v| v == 1.0));
        assert_eq!(bianchi_residual(&WeylStructure::flat(&g)).unwrap(), 0.0);
        assert_eq!(metricity_residual(&WeylStructure::flat(&g)).unwrap(), 0.0);
    }

    #[test]
    fn constant_k_gives_exponential() {
        let g = GridSpec::line(Coord::X, -1.0, 1.0, 21, Boundary::OneSided).unwrap();
        let c = 0.8;
        let k = CoField::vector_from_fn(&g, Variance::Down, 0, |_| [0.0, -c, 0.0, 0.0]);
        let b = reconstruct_b(&k, &[10], 1.0, 1e-12).unwrap();
        for i in 0..g.len() {
            let x = g.point(i)[1];
            assert!((b.values()[i] - (c * x).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn path_order_difference_is_second_order() {
        let diff = |n: usize| {
            let g = plane(n);
            let k = CoField::vector_from_fn(&g, Variance::Down, 0, |p| {
                let (x, y) = (p[1], p[2]);
                // k = ∇ e^{xy}
                let e = (x * y).exp();
                [0.0, y * e, x * e, 0.0]
            });
            let a = reconstruct_b_along(&k, &[0, 0], 1.0, 1.0, &[0, 1]).unwrap();
            let b = reconstruct_b_along(&k, &[0, 0], 1.0, 1.0, &[1, 0]).unwrap();
            a.values().iter().zip(b.values()).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
        };
        let (d1, d2) = (diff(17), diff(33));
        assert!(d1 < 1e-2 && d2 < d1 / 3.0, "{d1} {d2}");
    }

    #[test]
    fn metricity_vanishes_for_constant_metric() {
        let g = plane(9);
        let k = CoField::vector_from_fn(&g, Variance::Down, 0, |p| [0.1, p[1], -0.3, 0.0]);
        let w = WeylStructure::new(&g, MetricSource::Constant(MINKOWSKI), ScaleSource::Vector(k)).unwrap();
        assert!(metricity_residual(&w).unwrap() < 1e-14);
    }

    #[test]
    fn bianchi_converges_for_wavy_factor() {
        let res = |n: usize| {
            let g = GridSpec::line(Coord::X, -1.0, 1.0, n, Boundary::OneSided).unwrap();
            let b = g.sample(|p| 1.0 + 0.1 * p[1].sin());
            bianchi_residual(&WeylStructure::flat_with_factor(&g, b).unwrap()).unwrap()
        };
        let (r1, r2) = (res(41), res(81));
        let ratio = r1 / r2;
        assert!(ratio > 3.0 && ratio < 5.5, "{r1} {r2} {ratio}");
    }
}
