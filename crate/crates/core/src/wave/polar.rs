use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use num_complex::Complex64;

use super::{SolverKind, WaveError, WaveField, WaveSeries};
use crate::dynamics::ParticleParams;
use crate::grid::{Axis, Boundary, Coord, GridSpec, V4};

/// Default node threshold relative to `max |Ψ|`.
pub const DEFAULT_B_FLOOR_REL: f64 = 1e-8;

/// Marks a node point in [`PolarForm::region`].
pub const NO_REGION: usize = usize::MAX;

/// `Ψ = b exp(iS/ħ)` on a spatial or space-time grid.
///
/// `S` is unwrapped separately on each connected region off the node mask,
/// so it is continuous there up to one additive constant per region. On
/// masked points `S` holds the raw phase.
#[derive(Debug, Clone)]
pub struct PolarForm {
    pub grid: GridSpec,
    /// Time of the first slice (or of the field, for a spatial grid).
    pub t: f64,
    pub b: Vec<f64>,
    pub s: Vec<f64>,
    pub node_mask: Vec<bool>,
    pub region: Vec<usize>,
    pub regions: usize,
    pub b_floor: f64,
    pub kind: SolverKind,
    pub params: ParticleParams,
}

fn wrap(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then(o.1.cmp(&self.1))
    }
}

/// Quality-guided flood fill: grow each region from its largest-amplitude
/// point, always extending from the highest-amplitude frontier point.
/// Returns unwrapped phases and region labels.
fn unwrap(grid: &GridSpec, amp: &[f64], raw: &[f64], mask: &[bool], axes: &[usize]) -> (Vec<f64>, Vec<usize>, usize) {
    let n = grid.len();
    let mut phase = raw.to_vec();
    let mut region = vec![NO_REGION; n];
    let mut order: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
    order.sort_by(|&a, &b| amp[b].total_cmp(&amp[a]).then(a.cmp(&b)));
    let mut count = 0;
    let mut heap = BinaryHeap::new();
    for seed in order {
        if region[seed] != NO_REGION {
            continue;
        }
        region[seed] = count;
        heap.push(Item(amp[seed], seed));
        while let Some(Item(_, i)) = heap.pop() {
            for &a in axes {
                for off in [-1, 1] {
                    let Some(j) = grid.neighbor(i, a, off) else { continue };
                    if mask[j] || region[j] != NO_REGION {
                        continue;
                    }
                    phase[j] = phase[i] + wrap(raw[j] - raw[i]);
                    region[j] = count;
                    heap.push(Item(amp[j], j));
                }
            }
        }
        count += 1;
    }
    (phase, region, count)
}

/// Split `Ψ` into amplitude and action. Points with `|Ψ| ≤ b_floor_rel ·
/// max|Ψ|` form the node mask.
pub fn polar_decompose(field: &WaveField, b_floor_rel: f64) -> PolarForm {
    let grid = &field.grid;
    let b: Vec<f64> = field.values.iter().map(|v| v.norm()).collect();
    let raw: Vec<f64> = field.values.iter().map(|v| v.arg()).collect();
    let floor = b_floor_rel * field.max_abs();
    let mask: Vec<bool> = b.iter().map(|&v| !(v > floor)).collect();
    let axes: Vec<usize> = (0..grid.ndim()).collect();
    let (phase, region, regions) = unwrap(grid, &b, &raw, &mask, &axes);
    let hbar = field.params.hbar;
    PolarForm {
        grid: grid.clone(),
        t: field.t,
        b,
        s: phase.iter().map(|p| hbar * p).collect(),
        node_mask: mask,
        region,
        regions,
        b_floor: floor,
        kind: field.kind,
        params: field.params,
    }
}

/// Inverse of [`polar_decompose`] on spatial grids.
pub fn polar_compose(p: &PolarForm) -> Result<WaveField, WaveError> {
    let hbar = p.params.hbar;
    let vals = p.b.iter().zip(&p.s).map(|(&b, &s)| Complex64::from_polar(b, s / hbar)).collect();
    WaveField::new(&p.grid, vals, p.t, p.kind, p.params)
}

/// Stack the snapshots of a series into one field on a grid whose first
/// axis is time. Snapshots must be equally spaced; at least five are needed
/// for second time derivatives at the edges.
///
/// Each slice is unwrapped in space; every region is then shifted by a
/// multiple of `2πħ` to stay continuous in time with the previous slice at
/// its anchor point.
pub fn spacetime_polar(series: &WaveSeries, b_floor_rel: f64) -> Result<PolarForm, WaveError> {
    let snaps = &series.snapshots;
    let times = series.times();
    let n_t = snaps.len();
    if n_t < 2 {
        return Err(WaveError::Unsupported("need at least two snapshots for a space-time field".into()));
    }
    let dt = (times[n_t - 1] - times[0]) / (n_t - 1) as f64;
    for (k, t) in times.iter().enumerate() {
        if (t - (times[0] + k as f64 * dt)).abs() > 1e-9 * dt.max(1.0) {
            return Err(WaveError::Unsupported("snapshots must be equally spaced in time".into()));
        }
    }
    let space = series.grid();
    let mut axes = vec![Axis::new(Coord::T, times[0], times[n_t - 1], n_t, Boundary::OneSided)];
    axes.extend(space.axes().iter().cloned());
    let grid = GridSpec::new(axes)?;
    let per = space.len();
    let floor = b_floor_rel * snaps.iter().map(|s| s.max_abs()).fold(0.0, f64::max);
    let hbar = snaps[0].params.hbar;

    let mut b = Vec::with_capacity(grid.len());
    let mut s: Vec<f64> = Vec::with_capacity(grid.len());
    let mut mask: Vec<bool> = Vec::with_capacity(grid.len());
    let mut region = Vec::with_capacity(grid.len());
    let mut offset = 0;
    let spatial_axes: Vec<usize> = (0..space.ndim()).collect();
    for (k, snap) in snaps.iter().enumerate() {
        let amp: Vec<f64> = snap.values.iter().map(|v| v.norm()).collect();
        let raw: Vec<f64> = snap.values.iter().map(|v| v.arg()).collect();
        let m: Vec<bool> = amp.iter().map(|&v| !(v > floor)).collect();
        let (mut phase, reg, count) = unwrap(space, &amp, &raw, &m, &spatial_axes);
        if k > 0 {
            let prev = &s[(k - 1) * per..k * per];
            let prev_mask = &mask[(k - 1) * per..k * per];
            for r in 0..count {
                // anchor: largest amplitude point of the region also valid before
                let anchor = (0..per)
                    .filter(|&i| reg[i] == r && !prev_mask[i])
                    .max_by(|&a, &b| amp[a].total_cmp(&amp[b]));
                if let Some(a) = anchor {
                    let turns = ((prev[a] / hbar - phase[a]) / (2.0 * PI)).round();
                    for i in 0..per {
                        if reg[i] == r {
                            phase[i] += 2.0 * PI * turns;
                        }
                    }
                }
            }
        }
        b.extend_from_slice(&amp);
        s.extend(phase.iter().map(|p| hbar * p));
        mask.extend_from_slice(&m);
        region.extend(reg.iter().map(|&r| if r == NO_REGION { NO_REGION } else { r + offset }));
        offset += count;
    }
    Ok(PolarForm {
        grid,
        t: times[0],
        b,
        s,
        node_mask: mask,
        region,
        regions: offset,
        b_floor: floor,
        kind: snaps[0].kind,
        params: snaps[0].params,
    })
}

impl PolarForm {
    /// Phase of point `k` relative to point `i`, summed from wrapped
    /// single-step differences along each axis in turn.
    fn relative_phase(&self, i: usize, k: usize) -> f64 {
        let hbar = self.params.hbar;
        let mut cur = i;
        let mut acc = 0.0;
        for (a, ax) in self.grid.axes().iter().enumerate() {
            let mut d = self.grid.axis_index(k, a) as isize - self.grid.axis_index(i, a) as isize;
            if ax.boundary == Boundary::Periodic {
                let n = ax.points as isize;
                if d > n / 2 {
                    d -= n;
                } else if d < -(n / 2) {
                    d += n;
                }
            }
            for _ in 0..d.abs() {
                let next = self.grid.neighbor(cur, a, d.signum()).expect("stencil stays on the grid");
                acc += hbar * wrap((self.s[next] - self.s[cur]) / hbar);
                cur = next;
            }
        }
        acc
    }

    /// `S_,c` from wrapped local differences, so region seams and periodic
    /// winding do not produce `2πħ` jumps.
    pub fn ds(&self, i: usize, c: Coord) -> f64 {
        self.grid.d1_by(i, c, |k| self.relative_phase(i, k))
    }

    pub fn dds(&self, i: usize, c: Coord, d: Coord) -> f64 {
        self.grid.d2_by(i, c, d, |k| self.relative_phase(i, k))
    }

    pub fn db(&self, i: usize, c: Coord) -> f64 {
        self.grid.d1(&self.b, i, c)
    }

    pub fn ddb(&self, i: usize, c: Coord, d: Coord) -> f64 {
        self.grid.d2(&self.b, i, c, d)
    }

    pub fn grad_s(&self, i: usize) -> V4 {
        std::array::from_fn(|c| self.ds(i, Coord::ALL[c]))
    }

    pub fn grad_b(&self, i: usize) -> V4 {
        std::array::from_fn(|c| self.db(i, Coord::ALL[c]))
    }

    /// True when neither the point nor any stencil neighbour (up to two
    /// steps along each axis) is masked.
    pub fn is_clear(&self, i: usize) -> bool {
        if self.node_mask[i] {
            return false;
        }
        (0..self.grid.ndim()).all(|a| {
            [-2, -1, 1, 2].iter().all(|&o| self.grid.neighbor(i, a, o).is_none_or(|j| !self.node_mask[j]))
        })
    }

    pub fn max_b(&self) -> f64 {
        self.b.iter().fold(0.0, |m, v| m.max(*v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wave::init;

    fn field(grid: &GridSpec, f: impl Fn(f64) -> Complex64) -> WaveField {
        let vals = (0..grid.len()).map(|i| f(grid.point(i)[1])).collect();
        WaveField::new(grid, vals, 0.0, SolverKind::Schrodinger, ParticleParams::default()).unwrap()
    }

    #[test]
    fn real_positive_field_has_zero_phase() {
        let g = GridSpec::line(Coord::X, -1.0, 1.0, 21, Boundary::OneSided).unwrap();
        let p = polar_decompose(&field(&g, |x| Complex64::new(1.0 + x * x, 0.0)), DEFAULT_B_FLOOR_REL);
        assert!(p.s.iter().all(|&s| s == 0.0));
        assert_eq!(p.b[0], 2.0);
        assert_eq!(p.regions, 1);
    }

    #[test]
    fn unwrap_removes_jumps() {
        let l = 1.0;
        let g = GridSpec::line(Coord::X, 0.0, 10.0, 201, Boundary::OneSided).unwrap();
        let f = field(&g, |x| Complex64::from_polar(1.0, PI * x / l));
        let p = polar_decompose(&f, DEFAULT_B_FLOOR_REL);
        let off = p.s[0];
        for i in 0..g.len() {
            assert!((p.s[i] - off - PI * g.point(i)[1] / l).abs() < 1e-12);
        }
        let back = polar_compose(&p).unwrap();
        for (a, b) in back.values.iter().zip(&f.values) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn excited_state_splits_at_its_node() {
        let g = GridSpec::line(Coord::X, -6.0, 6.0, 120, Boundary::OneSided).unwrap();
        let psi = init::oscillator_eigenstate(&g, 1, 1.0, &ParticleParams::default()).unwrap();
        // grid avoids x = 0, so use a floor that catches the two cells around it
        let p = polar_decompose(&psi, 0.1);
        assert_eq!(p.regions, 2);
        let masked: Vec<f64> = (0..g.len()).filter(|&i| p.node_mask[i] && g.point(i)[1].abs() < 1.0).map(|i| g.point(i)[1]).collect();
        assert!(!masked.is_empty());
        assert!(masked.iter().all(|x| x.abs() < 0.1));
        let left = p.region[40];
        let right = p.region[80];
        assert_ne!(left, right);
    }

    #[test]
    fn wrapped_derivative_survives_winding() {
        let g = GridSpec::line(Coord::X, 0.0, 2.0 * PI, 64, Boundary::Periodic).unwrap();
        let f = field(&g, |x| Complex64::from_polar(1.0, 3.0 * x));
        let p = polar_decompose(&f, DEFAULT_B_FLOOR_REL);
        for i in 0..g.len() {
            assert!((p.ds(i, Coord::X) - 3.0).abs() < 1e-10);
        }
    }
}
