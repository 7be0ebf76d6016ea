//! Rectilinear grids over a subset of the four space-time coordinates.
//!
//! A [`GridSpec`] always lives inside a four-dimensional space-time with
//! coordinates `(t, x, y, z)`. Only the axes listed in a `GridSpec` are sampled;
//! fields are taken to be homogeneous along the remaining coordinates, so
//! derivatives along them vanish. This keeps every tensor formula in its
//! four-dimensional form regardless of how many axes are resolved.
//!
//! Stencil table (spacing `h`, all second order):
//!
//! | derivative | interior                          | non-periodic edge                      |
//! |------------|-----------------------------------|----------------------------------------|
//! | `f'`       | `(f[i+1] - f[i-1]) / 2h`          | `(-3 f0 + 4 f1 - f2) / 2h`             |
//! | `f''`      | `(f[i+1] - 2 f[i] + f[i-1]) / h²` | `(2 f0 - 5 f1 + 4 f2 - f3) / h²`       |
//! | `∂a ∂b`    | first-derivative stencil along `a` applied to the one along `b` |   |

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Four-vector of components indexed by [`Coord`].
pub type V4 = [f64; 4];
/// Rank-2 array of four-dimensional components.
pub type M4 = [[f64; 4]; 4];

/// Minimum points per axis; curvature needs second derivatives with
/// one-sided four-point edge stencils plus one interior point.
pub const MIN_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coord {
    T = 0,
    X = 1,
    Y = 2,
    Z = 3,
}

impl Coord {
    pub const ALL: [Coord; 4] = [Coord::T, Coord::X, Coord::Y, Coord::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Coord> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Coord::T => "t",
            Coord::X => "x",
            Coord::Y => "y",
            Coord::Z => "z",
        }
    }

    pub fn parse(s: &str) -> Option<Coord> {
        match s {
            "t" => Some(Coord::T),
            "x" => Some(Coord::X),
            "y" => Some(Coord::Y),
            "z" => Some(Coord::Z),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Wraps around; the point at `max` is identified with `min` and not stored.
    Periodic,
    /// Endpoints are stored; derivatives there use one-sided stencils.
    OneSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub coord: Coord,
    pub min: f64,
    pub max: f64,
    pub points: usize,
    pub boundary: Boundary,
}

impl Axis {
    pub fn new(coord: Coord, min: f64, max: f64, points: usize, boundary: Boundary) -> Self {
        Self { coord, min, max, points, boundary }
    }

    pub fn spacing(&self) -> f64 {
        match self.boundary {
            Boundary::Periodic => (self.max - self.min) / self.points as f64,
            Boundary::OneSided => (self.max - self.min) / (self.points - 1) as f64,
        }
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }

    pub fn length(&self) -> f64 {
        self.max - self.min
    }

    /// Same extent with the spacing halved.
    pub fn refined(&self) -> Axis {
        let points = match self.boundary {
            Boundary::Periodic => 2 * self.points,
            Boundary::OneSided => 2 * self.points - 1,
        };
        Axis { points, ..self.clone() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least one axis")]
    Empty,
    #[error("axis {coord:?} has {points} points, need at least {min}")]
    TooFewPoints { coord: Coord, points: usize, min: usize },
    #[error("axis {coord:?} has non-positive spacing (min {min}, max {max})")]
    BadExtent { coord: Coord, min: f64, max: f64 },
    #[error("axes must be listed in increasing coordinate order without repeats")]
    AxisOrder,
    #[error("value array has {got} entries, grid has {expected} points")]
    LengthMismatch { expected: usize, got: usize },
}

/// Rectilinear grid; flat indices are row-major in axis order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRaw", into = "GridSpecRaw")]
pub struct GridSpec {
    axes: Vec<Axis>,
    strides: Vec<usize>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        Self::with_min_points(axes, MIN_POINTS)
    }

    /// Like [`GridSpec::new`] but with a caller-chosen point floor; wave
    /// solvers only need three-point stencils.
    pub fn with_min_points(axes: Vec<Axis>, min_points: usize) -> Result<Self, GridError> {
        if axes.is_empty() {
            return Err(GridError::Empty);
        }
        for w in axes.windows(2) {
            if w[0].coord >= w[1].coord {
                return Err(GridError::AxisOrder);
            }
        }
        for a in &axes {
            if a.points < min_points.max(3) {
                return Err(GridError::TooFewPoints { coord: a.coord, points: a.points, min: min_points.max(3) });
            }
            if !(a.max > a.min) || !a.min.is_finite() || !a.max.is_finite() {
                return Err(GridError::BadExtent { coord: a.coord, min: a.min, max: a.max });
            }
        }
        let mut strides = vec![1; axes.len()];
        for i in (0..axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * axes[i + 1].points;
        }
        Ok(Self { axes, strides })
    }

    /// One-dimensional grid helper.
    pub fn line(coord: Coord, min: f64, max: f64, points: usize, boundary: Boundary) -> Result<Self, GridError> {
        Self::new(vec![Axis::new(coord, min, max, points, boundary)])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Position of `coord` in the axis list, if it is resolved.
    pub fn axis_of(&self, coord: Coord) -> Option<usize> {
        self.axes.iter().position(|a| a.coord == coord)
    }

    pub fn has_time(&self) -> bool {
        self.axis_of(Coord::T).is_some()
    }

    /// Spatial axes only, in order.
    pub fn spatial_axes(&self) -> impl Iterator<Item = (usize, &Axis)> {
        self.axes.iter().enumerate().filter(|(_, a)| a.coord != Coord::T)
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.axes[axis].spacing()
    }

    pub fn min_spacing(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(f64::INFINITY, f64::min)
    }

    /// Volume element of one cell over the listed axes.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for (i, s) in self.strides.iter().enumerate() {
            out[i] = flat / s;
            flat %= s;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Index along `axis` of flat index `flat`.
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.strides[axis]) % self.axes[axis].points
    }

    /// Four-dimensional coordinates of a grid point; unresolved coordinates are zero.
    pub fn point(&self, flat: usize) -> V4 {
        let mut p = [0.0; 4];
        for (a, axis) in self.axes.iter().enumerate() {
            p[axis.coord.index()] = axis.coordinate(self.axis_index(flat, a));
        }
        p
    }

    pub fn check_len(&self, n: usize) -> Result<(), GridError> {
        if n == self.len() {
            Ok(())
        } else {
            Err(GridError::LengthMismatch { expected: self.len(), got: n })
        }
    }

    /// Sample a scalar function at every grid point.
    pub fn sample<F: Fn(&V4) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.point(i))).collect()
    }

    /// Distance in points from `flat` to the nearest non-periodic edge.
    pub fn edge_distance(&self, flat: usize) -> usize {
        self.axes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.boundary == Boundary::OneSided)
            .map(|(k, a)| {
                let i = self.axis_index(flat, k);
                i.min(a.points - 1 - i)
            })
            .min()
            .unwrap_or(usize::MAX)
    }

    /// Neighbour of `flat` displaced by `offset` along `axis`, wrapping on
    /// periodic axes; `None` when it leaves a non-periodic axis.
    pub fn neighbor(&self, flat: usize, axis: usize, offset: isize) -> Option<usize> {
        let ax = &self.axes[axis];
        let i = self.axis_index(flat, axis) as isize;
        let n = ax.points as isize;
        let j = i + offset;
        let j = match ax.boundary {
            Boundary::Periodic => j.rem_euclid(n),
            Boundary::OneSided if (0..n).contains(&j) => j,
            Boundary::OneSided => return None,
        };
        Some((flat as isize + (j - i) * self.strides[axis] as isize) as usize)
    }

    /// First-derivative stencil at `flat` along `axis`: `(flat indices, weights)`.
    pub fn d1_stencil(&self, flat: usize, axis: usize) -> ([usize; 3], [f64; 3]) {
        let ax = &self.axes[axis];
        let h = ax.spacing();
        let s = self.strides[axis];
        let i = self.axis_index(flat, axis);
        let n = ax.points;
        match ax.boundary {
            Boundary::Periodic => {
                let up = self.neighbor(flat, axis, 1).unwrap();
                let dn = self.neighbor(flat, axis, -1).unwrap();
                ([dn, flat, up], [-0.5 / h, 0.0, 0.5 / h])
            }
            Boundary::OneSided if i == 0 => ([flat, flat + s, flat + 2 * s], [-1.5 / h, 2.0 / h, -0.5 / h]),
            Boundary::OneSided if i == n - 1 => ([flat, flat - s, flat - 2 * s], [1.5 / h, -2.0 / h, 0.5 / h]),
            Boundary::OneSided => ([flat - s, flat, flat + s], [-0.5 / h, 0.0, 0.5 / h]),
        }
    }

    /// Second-derivative stencil at `flat` along `axis`.
    pub fn d2_stencil(&self, flat: usize, axis: usize) -> ([usize; 4], [f64; 4]) {
        let ax = &self.axes[axis];
        let h2 = ax.spacing().powi(2);
        let s = self.strides[axis];
        let i = self.axis_index(flat, axis);
        let n = ax.points;
        match ax.boundary {
            Boundary::Periodic => {
                let up = self.neighbor(flat, axis, 1).unwrap();
                let dn = self.neighbor(flat, axis, -1).unwrap();
                ([dn, flat, up, flat], [1.0 / h2, -2.0 / h2, 1.0 / h2, 0.0])
            }
            Boundary::OneSided if i == 0 => (
                [flat, flat + s, flat + 2 * s, flat + 3 * s],
                [2.0 / h2, -5.0 / h2, 4.0 / h2, -1.0 / h2],
            ),
            Boundary::OneSided if i == n - 1 => (
                [flat, flat - s, flat - 2 * s, flat - 3 * s],
                [2.0 / h2, -5.0 / h2, 4.0 / h2, -1.0 / h2],
            ),
            Boundary::OneSided => ([flat - s, flat, flat + s, flat], [1.0 / h2, -2.0 / h2, 1.0 / h2, 0.0]),
        }
    }

    /// `∂f/∂x^c` at `flat`; zero when `c` is not resolved.
    pub fn d1(&self, f: &[f64], flat: usize, c: Coord) -> f64 {
        self.d1_by(flat, c, |i| f[i])
    }

    /// `∂²f/∂x^c∂x^d` at `flat`.
    pub fn d2(&self, f: &[f64], flat: usize, c: Coord, d: Coord) -> f64 {
        self.d2_by(flat, c, d, |i| f[i])
    }

    /// [`GridSpec::d1`] with values supplied per flat index.
    pub fn d1_by<F: Fn(usize) -> f64>(&self, flat: usize, c: Coord, f: F) -> f64 {
        match self.axis_of(c) {
            None => 0.0,
            Some(a) => {
                let (idx, w) = self.d1_stencil(flat, a);
                idx.iter().zip(w).filter(|(_, w)| *w != 0.0).map(|(&i, w)| w * f(i)).sum()
            }
        }
    }

    /// [`GridSpec::d2`] with values supplied per flat index.
    pub fn d2_by<F: Fn(usize) -> f64>(&self, flat: usize, c: Coord, d: Coord, f: F) -> f64 {
        let (Some(a), Some(b)) = (self.axis_of(c), self.axis_of(d)) else {
            return 0.0;
        };
        if a == b {
            let (idx, w) = self.d2_stencil(flat, a);
            idx.iter().zip(w).filter(|(_, w)| *w != 0.0).map(|(&i, w)| w * f(i)).sum()
        } else {
            let (ia, wa) = self.d1_stencil(flat, a);
            ia.iter()
                .zip(wa)
                .filter(|(_, w)| *w != 0.0)
                .map(|(&i, w)| {
                    let (ib, wb) = self.d1_stencil(i, b);
                    w * ib.iter().zip(wb).filter(|(_, v)| *v != 0.0).map(|(&j, v)| v * f(j)).sum::<f64>()
                })
                .sum()
        }
    }

    /// Gradient of a scalar sample at every point.
    pub fn gradient(&self, f: &[f64]) -> Vec<V4> {
        (0..self.len())
            .map(|i| {
                let mut g = [0.0; 4];
                for c in Coord::ALL {
                    g[c.index()] = self.d1(f, i, c);
                }
                g
            })
            .collect()
    }

    /// Locate a space-time point for multilinear interpolation: the base
    /// flat index and per-axis fractional offsets. Coordinates that are not
    /// resolved are ignored. `None` if outside a non-periodic axis.
    pub fn locate(&self, p: &V4) -> Option<(Vec<usize>, Vec<f64>)> {
        let mut base = Vec::with_capacity(self.axes.len());
        let mut frac = Vec::with_capacity(self.axes.len());
        for ax in &self.axes {
            let h = ax.spacing();
            let mut u = (p[ax.coord.index()] - ax.min) / h;
            match ax.boundary {
                Boundary::Periodic => {
                    u = u.rem_euclid(ax.points as f64);
                    let i = (u.floor() as usize).min(ax.points - 1);
                    base.push(i);
                    frac.push(u - i as f64);
                }
                Boundary::OneSided => {
                    let last = (ax.points - 1) as f64;
                    if !(u >= -1e-9 && u <= last + 1e-9) {
                        return None;
                    }
                    let u = u.clamp(0.0, last);
                    let i = (u.floor() as usize).min(ax.points - 2);
                    base.push(i);
                    frac.push(u - i as f64);
                }
            }
        }
        Some((base, frac))
    }

    /// Corner flat indices and weights of the interpolation cell around `p`.
    pub fn interpolation_weights(&self, p: &V4) -> Option<Vec<(usize, f64)>> {
        let (base, frac) = self.locate(p)?;
        let d = self.axes.len();
        let mut out = Vec::with_capacity(1 << d);
        for corner in 0..(1usize << d) {
            let mut flat = 0;
            let mut w = 1.0;
            for k in 0..d {
                let hi = (corner >> k) & 1 == 1;
                let mut i = base[k] + hi as usize;
                if i == self.axes[k].points {
                    i = 0; // periodic wrap
                }
                flat += i * self.strides[k];
                w *= if hi { frac[k] } else { 1.0 - frac[k] };
            }
            out.push((flat, w));
        }
        Some(out)
    }

    /// Multilinear interpolation of `f` at `p`.
    pub fn interpolate(&self, f: &[f64], p: &V4) -> Option<f64> {
        self.interpolation_weights(p).map(|ws| ws.iter().map(|&(i, w)| w * f[i]).sum())
    }

    /// Contains `p` along every resolved non-periodic axis.
    pub fn contains(&self, p: &V4) -> bool {
        self.locate(p).is_some()
    }

    /// Grid with every axis refined by a factor of two.
    pub fn refined(&self) -> GridSpec {
        GridSpec::with_min_points(self.axes.iter().map(Axis::refined).collect(), 3).expect("refinement keeps a valid grid")
    }

    pub fn describe(&self) -> String {
        self.axes
            .iter()
            .map(|a| format!("{}[{}, {}]x{}", a.coord.name(), a.min, a.max, a.points))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Serialize, Deserialize)]
struct GridSpecRaw {
    axes: Vec<Axis>,
}

impl TryFrom<GridSpecRaw> for GridSpec {
    type Error = GridError;
    fn try_from(raw: GridSpecRaw) -> Result<Self, GridError> {
        GridSpec::with_min_points(raw.axes, 3)
    }
}

impl From<GridSpec> for GridSpecRaw {
    fn from(g: GridSpec) -> Self {
        GridSpecRaw { axes: g.axes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, b: Boundary) -> GridSpec {
        GridSpec::line(Coord::X, 0.0, 1.0, n, b).unwrap()
    }

    #[test]
    fn rejects_too_few_points() {
        let e = GridSpec::line(Coord::X, 0.0, 1.0, 4, Boundary::OneSided).unwrap_err();
        assert!(matches!(e, GridError::TooFewPoints { points: 4, .. }));
    }

    #[test]
    fn rejects_unordered_axes() {
        let e = GridSpec::new(vec![
            Axis::new(Coord::Y, 0.0, 1.0, 5, Boundary::OneSided),
            Axis::new(Coord::X, 0.0, 1.0, 5, Boundary::OneSided),
        ])
        .unwrap_err();
        assert_eq!(e, GridError::AxisOrder);
    }

    #[test]
    fn stencils_exact_on_quadratics() {
        for b in [Boundary::OneSided] {
            let g = line(9, b);
            let f = g.sample(|p| 3.0 * p[1] * p[1] - p[1] + 2.0);
            for i in 0..g.len() {
                let x = g.point(i)[1];
                assert!((g.d1(&f, i, Coord::X) - (6.0 * x - 1.0)).abs() < 1e-12);
                assert!((g.d2(&f, i, Coord::X, Coord::X) - 6.0).abs() < 1e-9);
                assert_eq!(g.d1(&f, i, Coord::Y), 0.0);
            }
        }
    }

    #[test]
    fn mixed_derivative_of_bilinear() {
        let g = GridSpec::new(vec![
            Axis::new(Coord::X, -1.0, 1.0, 7, Boundary::OneSided),
            Axis::new(Coord::Y, 0.0, 2.0, 6, Boundary::OneSided),
        ])
        .unwrap();
        let f = g.sample(|p| p[1] * p[2] + p[1] * p[1]);
        for i in 0..g.len() {
            assert!((g.d2(&f, i, Coord::X, Coord::Y) - 1.0).abs() < 1e-10);
            assert!((g.d2(&f, i, Coord::Y, Coord::X) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn periodic_derivative_converges() {
        let err = |n| {
            let g = GridSpec::line(Coord::X, 0.0, std::f64::consts::TAU, n, Boundary::Periodic).unwrap();
            let f = g.sample(|p| p[1].sin());
            (0..g.len()).map(|i| (g.d1(&f, i, Coord::X) - g.point(i)[1].cos()).abs()).fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn interpolation_reproduces_linear_fields() {
        let g = GridSpec::new(vec![
            Axis::new(Coord::T, 0.0, 1.0, 5, Boundary::OneSided),
            Axis::new(Coord::X, -1.0, 1.0, 9, Boundary::OneSided),
        ])
        .unwrap();
        let f = g.sample(|p| 2.0 * p[0] - 3.0 * p[1] + 0.5);
        let p = [0.33, 0.71, 5.0, 0.0];
        let v = g.interpolate(&f, &p).unwrap();
        assert!((v - (2.0 * 0.33 - 3.0 * 0.71 + 0.5)).abs() < 1e-12);
        assert!(g.interpolate(&f, &[0.5, 1.5, 0.0, 0.0]).is_none());
        // the upper edge itself is inside
        assert!(g.interpolate(&f, &[1.0, 1.0, 0.0, 0.0]).is_some());
    }

    #[test]
    fn periodic_interpolation_wraps() {
        let g = GridSpec::line(Coord::X, 0.0, 1.0, 10, Boundary::Periodic).unwrap();
        let f: Vec<f64> = (0..10).map(|i| i as f64).collect();
        // between x = 0.9 (value 9) and x = 1.0 == 0.0 (value 0)
        let v = g.interpolate(&f, &[0.0, 0.95, 0.0, 0.0]).unwrap();
        assert!((v - 4.5).abs() < 1e-12);
        let w = g.interpolate(&f, &[0.0, 1.05, 0.0, 0.0]).unwrap();
        assert!((w - 0.5).abs() < 1e-12);
    }

    #[test]
    fn refinement_halves_spacing() {
        let g = line(11, Boundary::OneSided);
        let r = g.refined();
        assert_eq!(r.len(), 21);
        assert!((r.spacing(0) - g.spacing(0) / 2.0).abs() < 1e-15);
        let p = line(10, Boundary::Periodic).refined();
        assert_eq!(p.len(), 20);
    }
}
