use super::sample::{cell, cell_masses};
use super::EnsembleError;
use crate::grid::{Boundary, GridSpec, V4};

/// CDF of the piecewise-constant density `w` on a one-axis grid.
pub struct GridCdf {
    edges: Vec<(f64, f64)>,
    below: Vec<f64>,
    mass: Vec<f64>,
}

impl GridCdf {
    pub fn new(grid: &GridSpec, w: &[f64]) -> Result<Self, EnsembleError> {
        if grid.ndim() != 1 || grid.has_time() {
            return Err(EnsembleError::Invalid("CDF needs one spatial axis".into()));
        }
        let masses = cell_masses(grid, w);
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(EnsembleError::ZeroDensity);
        }
        let mut below = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in &masses {
            below.push(acc);
            acc += m / total;
        }
        let edges = (0..grid.len()).map(|k| cell(grid, 0, k)).collect();
        Ok(Self { edges, below, mass: masses.iter().map(|m| m / total).collect() })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.edges.partition_point(|e| e.1 <= x);
        if k >= self.edges.len() {
            return 1.0;
        }
        let (lo, hi) = self.edges[k];
        let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        self.below[k] + f * self.mass[k]
    }
}

/// Kolmogorov-Smirnov distance between sample positions along the grid
/// axis and the density `w`. Positions are wrapped onto periodic axes.
pub fn ks_statistic(grid: &GridSpec, w: &[f64], positions: &[V4]) -> Result<f64, EnsembleError> {
    let cdf = GridCdf::new(grid, w)?;
    let ax = &grid.axes()[0];
    let c = ax.coord.index();
    let wrap = |x: f64| match ax.boundary {
        Boundary::Periodic => ax.min + (x - ax.min).rem_euclid(ax.length()),
        Boundary::OneSided => x,
    };
    let mut xs: Vec<f64> = positions.iter().map(|p| wrap(p[c])).collect();
    if xs.is_empty() {
        return Err(EnsembleError::Invalid("no positions".into()));
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf.eval(*x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

fn axis_bin(grid: &GridSpec, axis: usize, bins: usize, x: f64) -> Option<usize> {
    let ax = &grid.axes()[axis];
    let u = (x - ax.min) / ax.length();
    let u = match ax.boundary {
        Boundary::Periodic => u.rem_euclid(1.0),
        Boundary::OneSided => u,
    };
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    Some(((u * bins as f64) as usize).min(bins - 1))
}

/// Overlap of `[lo, hi]` with each bin along an axis.
fn overlaps(grid: &GridSpec, axis: usize, bins: usize, lo: f64, hi: f64) -> Vec<(usize, f64)> {
    let ax = &grid.axes()[axis];
    let width = ax.length() / bins as f64;
    let mut out = Vec::new();
    // periodic cells may straddle the seam; split them there
    let pieces: Vec<(f64, f64)> = if ax.boundary == Boundary::Periodic && lo < ax.min {
        vec![(lo + ax.length(), ax.max), (ax.min, hi)]
    } else if ax.boundary == Boundary::Periodic && hi > ax.max {
        vec![(lo, ax.max), (ax.min, hi - ax.length())]
    } else {
        vec![(lo, hi)]
    };
    for (a, b) in pieces {
        if b <= a {
            continue;
        }
        let first = (((a - ax.min) / width).floor().max(0.0) as usize).min(bins - 1);
        let last = ((((b - ax.min) / width).ceil() as usize).max(1) - 1).min(bins - 1);
        for k in first..=last {
            let (blo, bhi) = (ax.min + k as f64 * width, ax.min + (k + 1) as f64 * width);
            let o = b.min(bhi) - a.max(blo);
            if o > 0.0 {
                out.push((k, o / (hi - lo)));
            }
        }
    }
    out
}

/// Bin probabilities of the density `w` on a regular histogram with `bins`
/// bins per grid axis (row-major).
pub fn reference_histogram(grid: &GridSpec, w: &[f64], bins: usize) -> Result<Vec<f64>, EnsembleError> {
    if bins == 0 {
        return Err(EnsembleError::Invalid("need at least one bin".into()));
    }
    let masses = cell_masses(grid, w);
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(EnsembleError::ZeroDensity);
    }
    let d = grid.ndim();
    let mut hist = vec![0.0; bins.pow(d as u32)];
    for (i, m) in masses.iter().enumerate() {
        if *m == 0.0 {
            continue;
        }
        let per_axis: Vec<Vec<(usize, f64)>> = (0..d)
            .map(|a| {
                let (lo, hi) = cell(grid, a, grid.axis_index(i, a));
                overlaps(grid, a, bins, lo, hi)
            })
            .collect();
        let mut stack = vec![(0usize, 0usize, 1.0f64)];
        while let Some((a, flat, f)) = stack.pop() {
            if a == d {
                hist[flat] += m / total * f;
                continue;
            }
            for &(k, o) in &per_axis[a] {
                stack.push((a + 1, flat * bins + k, f * o));
            }
        }
    }
    Ok(hist)
}

/// Empirical bin probabilities of positions; points outside the grid are
/// dropped from the counts but still count toward the total.
pub fn empirical_histogram(grid: &GridSpec, positions: &[V4], bins: usize) -> Vec<f64> {
    let d = grid.ndim();
    let mut hist = vec![0.0; bins.pow(d as u32)];
    let n = positions.len() as f64;
    'outer: for p in positions {
        let mut flat = 0;
        for (a, ax) in grid.axes().iter().enumerate() {
            match axis_bin(grid, a, bins, p[ax.coord.index()]) {
                Some(k) => flat = flat * bins + k,
                None => continue 'outer,
            }
        }
        hist[flat] += 1.0 / n;
    }
    hist
}

/// `Σ |p_emp - p_ref|` over histogram bins.
pub fn l1_distance(grid: &GridSpec, w: &[f64], positions: &[V4], bins: usize) -> Result<f64, EnsembleError> {
    let r = reference_histogram(grid, w, bins)?;
    let e = empirical_histogram(grid, positions, bins);
    Ok(r.iter().zip(&e).map(|(a, b)| (a - b).abs()).sum())
}

/// Adjacent-pair order inversions of 1D paths: particles are ordered by
/// their first coordinate along `coord`, and every later sample where a
/// neighbour pair swaps order counts once.
pub fn count_crossings(paths: &[Vec<V4>], coord: usize) -> usize {
    if paths.is_empty() {
        return 0;
    }
    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.sort_by(|&a, &b| paths[a][0][coord].total_cmp(&paths[b][0][coord]));
    let steps = paths.iter().map(|p| p.len()).min().unwrap_or(0);
    let mut count = 0;
    for s in 1..steps {
        for pair in order.windows(2) {
            if paths[pair[1]][s][coord] < paths[pair[0]][s][coord] {
                count += 1;
            }
        }
    }
    count
}
