use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EnsembleError;
use crate::grid::{Boundary, GridSpec, V4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Inverse of the cell-wise linear CDF; one spatial axis only.
    InverseCdf,
    /// Uniform proposals accepted with probability `w / max w`.
    Rejection,
}

/// Independent stream for particle `i`, derived from the master seed.
pub fn particle_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(i as u64);
    r
}

/// Extent `[lo, hi]` of the cell owned by grid index `k` along an axis.
/// Cells are centred on grid points and clipped at non-periodic ends.
pub(crate) fn cell(grid: &GridSpec, axis: usize, k: usize) -> (f64, f64) {
    let ax = &grid.axes()[axis];
    let h = ax.spacing();
    let x = ax.coordinate(k);
    let (mut lo, mut hi) = (x - 0.5 * h, x + 0.5 * h);
    if ax.boundary == Boundary::OneSided {
        lo = lo.max(ax.min);
        hi = hi.min(ax.max);
    }
    (lo, hi)
}

/// Probability mass of each grid cell for a pointwise density.
pub(crate) fn cell_masses(grid: &GridSpec, w: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let vol: f64 = (0..grid.ndim())
                .map(|a| {
                    let (lo, hi) = cell(grid, a, grid.axis_index(i, a));
                    hi - lo
                })
                .product();
            w[i] * vol
        })
        .collect()
}

fn wrap_into(grid: &GridSpec, axis: usize, x: f64) -> f64 {
    let ax = &grid.axes()[axis];
    match ax.boundary {
        Boundary::Periodic => ax.min + (x - ax.min).rem_euclid(ax.length()),
        Boundary::OneSided => x,
    }
}

/// Draw `n` positions distributed as `w` (piecewise constant per cell).
///
/// The draw for particle `i` uses only its own stream, so results do not
/// depend on scheduling.
pub fn sample_initial(grid: &GridSpec, w: &[f64], n: usize, seed: u64, sampler: Sampler) -> Result<Vec<V4>, EnsembleError> {
    grid.check_len(w.len()).map_err(|e| EnsembleError::Invalid(e.to_string()))?;
    if grid.has_time() {
        return Err(EnsembleError::Invalid("sampling grid must be spatial".into()));
    }
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(EnsembleError::Invalid("density must be finite and non-negative".into()));
    }
    let masses = cell_masses(grid, w);
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(EnsembleError::ZeroDensity);
    }
    match sampler {
        Sampler::InverseCdf => {
            if grid.ndim() != 1 {
                return Err(EnsembleError::Invalid("inverse-CDF sampling needs one spatial axis".into()));
            }
            let mut cdf = Vec::with_capacity(masses.len());
            let mut acc = 0.0;
            for m in &masses {
                acc += m / total;
                cdf.push(acc);
            }
            Ok((0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = particle_rng(seed, i);
                    let u: f64 = rng.random();
                    let k = cdf.partition_point(|&c| c <= u).min(masses.len() - 1);
                    let below = if k == 0 { 0.0 } else { cdf[k - 1] };
                    let frac = ((u - below) / (cdf[k] - below)).clamp(0.0, 1.0);
                    let (lo, hi) = cell(grid, 0, k);
                    let mut x = [0.0; 4];
                    x[grid.axes()[0].coord.index()] = wrap_into(grid, 0, lo + frac * (hi - lo));
                    x
                })
                .collect())
        }
        Sampler::Rejection => {
            let top = w.iter().fold(0.0f64, |m, v| m.max(*v));
            Ok((0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = particle_rng(seed, i);
                    loop {
                        let mut x = [0.0; 4];
                        for ax in grid.axes() {
                            x[ax.coord.index()] = ax.min + rng.random::<f64>() * ax.length();
                        }
                        if rng.random::<f64>() * top < w[nearest_cell(grid, &x)] {
                            return x;
                        }
                    }
                })
                .collect())
        }
    }
}

/// Flat index of the cell containing `x`.
pub(crate) fn nearest_cell(grid: &GridSpec, x: &V4) -> usize {
    let mut multi = Vec::with_capacity(grid.ndim());
    for ax in grid.axes() {
        let h = ax.spacing();
        let u = ((x[ax.coord.index()] - ax.min) / h).round();
        let k = match ax.boundary {
            Boundary::Periodic => (u as i64).rem_euclid(ax.points as i64) as usize,
            Boundary::OneSided => u.clamp(0.0, (ax.points - 1) as f64) as usize,
        };
        multi.push(k);
    }
    grid.flat_index(&multi)
}
