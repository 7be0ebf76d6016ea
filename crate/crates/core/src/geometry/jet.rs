//! Pointwise derivative jets and analytic field models.
//!
//! Index convention: derivative indices come last, so `dg[a][b][c]` is
//! `∂_c g_ab`, `ddg[a][b][c][d]` is `∂_d ∂_c g_ab` and `dk[a][c]` is `∂_c k_a`.

use std::sync::Arc;

use crate::grid::{M4, V4};

pub type T3 = [[[f64; 4]; 4]; 4];
pub type T4 = [[[[f64; 4]; 4]; 4]; 4];

pub const ZERO_M4: M4 = [[0.0; 4]; 4];
pub const ZERO_T3: T3 = [[[0.0; 4]; 4]; 4];
pub const ZERO_T4: T4 = [[[[0.0; 4]; 4]; 4]; 4];

/// Minkowski metric with signature (+, -, -, -).
pub const MINKOWSKI: M4 = [[1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [0.0, 0.0, 0.0, -1.0]];

/// Value, gradient and Hessian of a scalar at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarJet {
    pub value: f64,
    pub grad: V4,
    pub hess: M4,
}

impl ScalarJet {
    pub fn constant(value: f64) -> Self {
        Self { value, grad: [0.0; 4], hess: ZERO_M4 }
    }

    pub fn new(value: f64, grad: V4, hess: M4) -> Self {
        Self { value, grad, hess }
    }

    pub fn mul(&self, o: &ScalarJet) -> ScalarJet {
        let mut grad = [0.0; 4];
        let mut hess = ZERO_M4;
        for c in 0..4 {
            grad[c] = self.grad[c] * o.value + self.value * o.grad[c];
            for d in 0..4 {
                hess[c][d] = self.hess[c][d] * o.value
                    + self.grad[c] * o.grad[d]
                    + self.grad[d] * o.grad[c]
                    + self.value * o.hess[c][d];
            }
        }
        ScalarJet { value: self.value * o.value, grad, hess }
    }

    pub fn recip(&self) -> ScalarJet {
        let f = self.value;
        let mut grad = [0.0; 4];
        let mut hess = ZERO_M4;
        for c in 0..4 {
            grad[c] = -self.grad[c] / (f * f);
            for d in 0..4 {
                hess[c][d] = -self.hess[c][d] / (f * f) + 2.0 * self.grad[c] * self.grad[d] / (f * f * f);
            }
        }
        ScalarJet { value: 1.0 / f, grad, hess }
    }

    pub fn scale(&self, s: f64) -> ScalarJet {
        let mut out = *self;
        out.value *= s;
        out.grad.iter_mut().for_each(|v| *v *= s);
        out.hess.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    /// `∇ ln f` with its derivative, as a covector jet.
    pub fn log_gradient(&self) -> CovectorJet {
        let f = self.value;
        let mut k = [0.0; 4];
        let mut dk = ZERO_M4;
        for a in 0..4 {
            k[a] = self.grad[a] / f;
            for c in 0..4 {
                dk[a][c] = self.hess[a][c] / f - self.grad[a] * self.grad[c] / (f * f);
            }
        }
        CovectorJet { k, dk }
    }
}

/// Covector with its first derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovectorJet {
    pub k: V4,
    pub dk: M4,
}

impl CovectorJet {
    pub fn zero() -> Self {
        Self { k: [0.0; 4], dk: ZERO_M4 }
    }

    pub fn add(&self, o: &CovectorJet) -> CovectorJet {
        let mut out = *self;
        for a in 0..4 {
            out.k[a] += o.k[a];
            for c in 0..4 {
                out.dk[a][c] += o.dk[a][c];
            }
        }
        out
    }

    pub fn neg(&self) -> CovectorJet {
        let mut out = *self;
        out.k.iter_mut().for_each(|v| *v = -*v);
        out.dk.iter_mut().flatten().for_each(|v| *v = -*v);
        out
    }
}

/// Metric components with first and second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricJet {
    pub g: M4,
    pub dg: T3,
    pub ddg: T4,
}

impl MetricJet {
    pub fn constant(g: M4) -> Self {
        Self { g, dg: ZERO_T3, ddg: ZERO_T4 }
    }

    /// `f(x) * g0` for a constant matrix `g0`.
    pub fn scalar_times(f: &ScalarJet, g0: &M4) -> Self {
        let mut out = Self::constant(ZERO_M4);
        for a in 0..4 {
            for b in 0..4 {
                out.g[a][b] = f.value * g0[a][b];
                for c in 0..4 {
                    out.dg[a][b][c] = f.grad[c] * g0[a][b];
                    for d in 0..4 {
                        out.ddg[a][b][c][d] = f.hess[c][d] * g0[a][b];
                    }
                }
            }
        }
        out
    }

    /// `f(x) * g(x)` with the product rule.
    pub fn scaled_by(&self, f: &ScalarJet) -> Self {
        let mut out = *self;
        for a in 0..4 {
            for b in 0..4 {
                out.g[a][b] = f.value * self.g[a][b];
                for c in 0..4 {
                    out.dg[a][b][c] = f.grad[c] * self.g[a][b] + f.value * self.dg[a][b][c];
                    for d in 0..4 {
                        out.ddg[a][b][c][d] = f.hess[c][d] * self.g[a][b]
                            + f.grad[c] * self.dg[a][b][d]
                            + f.grad[d] * self.dg[a][b][c]
                            + f.value * self.ddg[a][b][c][d];
                    }
                }
            }
        }
        out
    }
}

pub trait ScalarModel: Send + Sync {
    fn jet(&self, x: &V4) -> ScalarJet;
}

pub trait CovectorModel: Send + Sync {
    fn jet(&self, x: &V4) -> CovectorJet;
}

pub trait MetricModel: Send + Sync {
    fn jet(&self, x: &V4) -> MetricJet;
}

impl<F: Fn(&V4) -> ScalarJet + Send + Sync> ScalarModel for F {
    fn jet(&self, x: &V4) -> ScalarJet {
        self(x)
    }
}

impl<F: Fn(&V4) -> CovectorJet + Send + Sync> CovectorModel for F {
    fn jet(&self, x: &V4) -> CovectorJet {
        self(x)
    }
}

impl<F: Fn(&V4) -> MetricJet + Send + Sync> MetricModel for F {
    fn jet(&self, x: &V4) -> MetricJet {
        self(x)
    }
}

pub type ScalarFn = Arc<dyn ScalarModel>;
pub type CovectorFn = Arc<dyn CovectorModel>;
pub type MetricFn = Arc<dyn MetricModel>;

/// Conformally flat metric `Ω(x)² η`.
pub fn conformally_flat(omega: ScalarFn) -> MetricFn {
    Arc::new(move |x: &V4| {
        let w = omega.jet(x);
        MetricJet::scalar_times(&w.mul(&w), &MINKOWSKI)
    })
}

/// Scale vector of an integrable structure, `k = -∇b / b`.
pub fn scale_vector_of_factor(b: ScalarFn) -> CovectorFn {
    Arc::new(move |x: &V4| b.jet(x).log_gradient().neg())
}

/// Gradient covector `k = ∇φ`.
pub fn gradient_of(phi: ScalarFn) -> CovectorFn {
    Arc::new(move |x: &V4| {
        let j = phi.jet(x);
        CovectorJet { k: j.grad, dk: j.hess }
    })
}

/// Jet of `e^{c·x}`.
pub fn exponential_jet(c: V4, x: &V4) -> ScalarJet {
    let v = (0..4).map(|i| c[i] * x[i]).sum::<f64>().exp();
    let mut grad = [0.0; 4];
    let mut hess = [[0.0; 4]; 4];
    for a in 0..4 {
        grad[a] = c[a] * v;
        for b in 0..4 {
            hess[a][b] = c[a] * c[b] * v;
        }
    }
    ScalarJet::new(v, grad, hess)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_reciprocal_of_exponentials() {
        let x = [0.1, 0.2, -0.3, 0.4];
        let a = exponential_jet([1.0, 2.0, 0.0, -1.0], &x);
        let b = exponential_jet([0.5, -1.0, 3.0, 0.0], &x);
        let ab = a.mul(&b);
        let direct = exponential_jet([1.5, 1.0, 3.0, -1.0], &x);
        for c in 0..4 {
            assert!((ab.grad[c] - direct.grad[c]).abs() < 1e-12);
            for d in 0..4 {
                assert!((ab.hess[c][d] - direct.hess[c][d]).abs() < 1e-12);
            }
        }
        let inv = a.recip();
        let direct = exponential_jet([-1.0, -2.0, 0.0, 1.0], &x);
        for c in 0..4 {
            for d in 0..4 {
                assert!((inv.hess[c][d] - direct.hess[c][d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_gradient_of_exponential_is_constant() {
        let j = exponential_jet([0.3, -0.7, 0.0, 0.0], &[0.0, 1.3, 0.0, 0.0]).log_gradient();
        assert!((j.k[0] - 0.3).abs() < 1e-14 && (j.k[1] + 0.7).abs() < 1e-14);
        assert!(j.dk.iter().flatten().all(|v| v.abs() < 1e-14));
    }
}
