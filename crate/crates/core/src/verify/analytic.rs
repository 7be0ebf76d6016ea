use std::f64::consts::PI;

use crate::geometry::ScalarJet;
use crate::grid::{Axis, Boundary, GridSpec, V4};

/// One-coordinate factor of a separable test function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    One,
    Sin(f64),
    Cos(f64),
}

impl Profile {
    fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            Profile::One => (1.0, 0.0, 0.0),
            Profile::Sin(k) => ((k * x).sin(), k * (k * x).cos(), -k * k * (k * x).sin()),
            Profile::Cos(k) => ((k * x).cos(), -k * (k * x).sin(), -k * k * (k * x).cos()),
        }
    }
}

/// Jet of `base + amp · Π_c f_c(x^c)`.
pub fn product_jet(base: f64, amp: f64, factors: &[Profile; 4], x: &V4) -> ScalarJet {
    let e: [(f64, f64, f64); 4] = std::array::from_fn(|c| factors[c].eval(x[c]));
    let prod_except = |skip: &[usize]| -> f64 { (0..4).filter(|c| !skip.contains(c)).map(|c| e[c].0).product() };
    let mut grad = [0.0; 4];
    let mut hess = [[0.0; 4]; 4];
    for c in 0..4 {
        grad[c] = amp * e[c].1 * prod_except(&[c]);
        for d in 0..4 {
            hess[c][d] = if c == d { amp * e[c].2 * prod_except(&[c]) } else { amp * e[c].1 * e[d].1 * prod_except(&[c, d]) };
        }
    }
    ScalarJet::new(base + amp * prod_except(&[]), grad, hess)
}

/// Wavenumber fitting one period into the axis, so test functions are
/// smooth across a periodic seam.
pub(crate) fn fitted_wavenumber(axis: &Axis) -> f64 {
    2.0 * PI / axis.length()
}

/// Grid whose axes copy `template` along each listed coordinate.
pub(crate) fn template_grid(template: &Axis, coords: &[crate::grid::Coord]) -> Result<GridSpec, crate::grid::GridError> {
    GridSpec::new(coords.iter().map(|&c| Axis { coord: c, ..template.clone() }).collect())
}

/// Points away from non-periodic edges: the middle 80% of every open axis.
pub(crate) fn central(grid: &GridSpec, i: usize) -> bool {
    grid.axes().iter().enumerate().all(|(a, ax)| {
        if ax.boundary == Boundary::Periodic {
            return true;
        }
        let u = (ax.coordinate(grid.axis_index(i, a)) - ax.min) / ax.length();
        (0.1..=0.9).contains(&u)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_jet_matches_differences() {
        let f = [Profile::Cos(0.7), Profile::Sin(1.3), Profile::Cos(0.4), Profile::One];
        let x = [0.3, -0.8, 1.1, 0.0];
        let j = product_jet(2.0, 0.5, &f, &x);
        let h = 1e-4;
        for c in 0..3 {
            let mut p = x;
            let mut m = x;
            p[c] += h;
            m[c] -= h;
            let (jp, jm) = (product_jet(2.0, 0.5, &f, &p), product_jet(2.0, 0.5, &f, &m));
            assert!(((jp.value - jm.value) / (2.0 * h) - j.grad[c]).abs() < 1e-7);
            for d in 0..3 {
                assert!(((jp.grad[d] - jm.grad[d]) / (2.0 * h) - j.hess[c][d]).abs() < 1e-7);
            }
        }
    }
}
