use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::grid::{GridSpec, V4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variance {
    Up,
    Down,
}

/// A tensor field sampled on a grid that also carries its scale weight.
///
/// Under `ds -> λ ds` the values multiply by `λ^power`. Components run over
/// all four space-time indices per slot; `data` is component-major, so
/// component `c` occupies `data[c * n .. (c + 1) * n]` with `n` grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct CoField {
    grid: GridSpec,
    slots: Vec<Variance>,
    power: i32,
    data: Vec<f64>,
}

pub(crate) fn component_index(indices: &[usize]) -> usize {
    indices.iter().fold(0, |acc, &i| acc * 4 + i)
}

pub(crate) fn component_indices(mut c: usize, rank: usize) -> Vec<usize> {
    let mut out = vec![0; rank];
    for k in (0..rank).rev() {
        out[k] = c % 4;
        c /= 4;
    }
    out
}

impl CoField {
    pub fn zeros(grid: &GridSpec, slots: Vec<Variance>, power: i32) -> Self {
        let n = grid.len() * 4usize.pow(slots.len() as u32);
        Self { grid: grid.clone(), slots, power, data: vec![0.0; n] }
    }

    pub fn scalar(grid: &GridSpec, power: i32, values: Vec<f64>) -> Result<Self, GeometryError> {
        grid.check_len(values.len())?;
        Ok(Self { grid: grid.clone(), slots: vec![], power, data: values })
    }

    pub fn scalar_from_fn<F: Fn(&V4) -> f64>(grid: &GridSpec, power: i32, f: F) -> Self {
        Self { grid: grid.clone(), slots: vec![], power, data: grid.sample(f) }
    }

    /// Rank-1 field from a function returning all four components.
    pub fn vector_from_fn<F: Fn(&V4) -> V4>(grid: &GridSpec, variance: Variance, power: i32, f: F) -> Self {
        let n = grid.len();
        let mut data = vec![0.0; 4 * n];
        for i in 0..n {
            let v = f(&grid.point(i));
            for c in 0..4 {
                data[c * n + i] = v[c];
            }
        }
        Self { grid: grid.clone(), slots: vec![variance], power, data }
    }

    /// Rank-2 field from a function returning the 4x4 component matrix.
    pub fn tensor_from_fn<F: Fn(&V4) -> [[f64; 4]; 4]>(grid: &GridSpec, slots: [Variance; 2], power: i32, f: F) -> Self {
        let n = grid.len();
        let mut data = vec![0.0; 16 * n];
        for i in 0..n {
            let m = f(&grid.point(i));
            for a in 0..4 {
                for b in 0..4 {
                    data[(a * 4 + b) * n + i] = m[a][b];
                }
            }
        }
        Self { grid: grid.clone(), slots: slots.to_vec(), power, data }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn slots(&self) -> &[Variance] {
        &self.slots
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn power(&self) -> i32 {
        self.power
    }

    pub fn components(&self) -> usize {
        4usize.pow(self.rank() as u32)
    }

    pub fn component(&self, indices: &[usize]) -> &[f64] {
        let n = self.grid.len();
        let c = component_index(indices);
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, indices: &[usize]) -> &mut [f64] {
        let n = self.grid.len();
        let c = component_index(indices);
        &mut self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn flat_component(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn flat_component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn value(&self, indices: &[usize], point: usize) -> f64 {
        self.component(indices)[point]
    }

    /// Scalar values; panics on non-scalar fields.
    pub fn values(&self) -> &[f64] {
        assert_eq!(self.rank(), 0, "values() on a rank-{} field", self.rank());
        &self.data
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Four components of a rank-1 field at a grid point.
    pub fn vector_at(&self, point: usize) -> V4 {
        assert_eq!(self.rank(), 1);
        let n = self.grid.len();
        [self.data[point], self.data[n + point], self.data[2 * n + point], self.data[3 * n + point]]
    }

    /// Multilinear interpolation of one component at a space-time point.
    pub fn interpolate(&self, indices: &[usize], p: &V4) -> Option<f64> {
        self.grid.interpolate(self.component(indices), p)
    }

    /// Apply a scale transformation with pointwise factor `lambda`.
    pub fn rescaled(&self, lambda: &[f64]) -> Result<Self, GeometryError> {
        self.grid.check_len(lambda.len())?;
        if let Some(i) = lambda.iter().position(|&l| !(l > 0.0)) {
            return Err(GeometryError::NonPositiveScale { point: self.grid.point(i), value: lambda[i] });
        }
        let n = self.grid.len();
        let mut out = self.clone();
        for (k, v) in out.data.iter_mut().enumerate() {
            *v *= lambda[k % n].powi(self.power);
        }
        Ok(out)
    }

    /// Outer product; scale weights add.
    pub fn product(&self, other: &CoField) -> Result<Self, GeometryError> {
        if self.grid != other.grid {
            return Err(GeometryError::GridMismatch);
        }
        let n = self.grid.len();
        let mut slots = self.slots.clone();
        slots.extend_from_slice(&other.slots);
        let mut out = CoField::zeros(&self.grid, slots, self.power + other.power);
        for a in 0..self.components() {
            for b in 0..other.components() {
                let c = a * other.components() + b;
                let (x, y) = (self.flat_component(a), other.flat_component(b));
                let dst = &mut out.data[c * n..(c + 1) * n];
                for i in 0..n {
                    dst[i] = x[i] * y[i];
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &CoField) -> Result<Self, GeometryError> {
        if self.grid != other.grid || self.slots != other.slots {
            return Err(GeometryError::GridMismatch);
        }
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Maximum absolute value over all components and points.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn with_power(mut self, power: i32) -> Self {
        self.power = power;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, Coord};

    #[test]
    fn component_index_roundtrip() {
        for c in 0..64 {
            assert_eq!(component_index(&component_indices(c, 3)), c);
        }
    }

    #[test]
    fn rescale_multiplies_by_power() {
        let g = GridSpec::line(Coord::X, 0.0, 1.0, 5, Boundary::OneSided).unwrap();
        let f = CoField::scalar(&g, -2, vec![1.0; 5]).unwrap();
        let out = f.rescaled(&[2.0; 5]).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.25));
        assert!(f.rescaled(&[1.0, 1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn product_adds_powers() {
        let g = GridSpec::line(Coord::X, 0.0, 1.0, 5, Boundary::OneSided).unwrap();
        let a = CoField::scalar_from_fn(&g, 2, |p| p[1]);
        let v = CoField::vector_from_fn(&g, Variance::Down, -1, |p| [1.0, p[1], 0.0, 2.0]);
        let c = a.product(&v).unwrap();
        assert_eq!(c.power(), 1);
        assert_eq!(c.rank(), 1);
        assert_eq!(c.value(&[1], 4), 1.0);
        assert_eq!(c.value(&[3], 2), 1.0);
    }
}
