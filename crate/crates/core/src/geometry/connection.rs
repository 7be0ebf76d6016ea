use rayon::prelude::*;

use super::cofield::{component_indices, CoField, Variance};
use super::jet::{T3, T4, ZERO_T3, ZERO_T4};
use super::{invert4, GeometryError, PointJet, WeylStructure};
use crate::grid::{Coord, GridSpec, M4, V4};

/// Connection data at one point, derived from a [`PointJet`].
///
/// `christoffel[i][k][l]` is the Riemannian `γ^i_kl`, `gamma[i][k][l]` the
/// Weyl connection `Γ^i_kl = γ^i_kl - (δ^i_k k_l + δ^i_l k_k - g_kl k^i)`.
/// Derivative arrays append the derivative index: `d_gamma[i][k][l][m] = ∂_m Γ^i_kl`.
#[derive(Debug, Clone, Copy)]
pub struct PointGeometry {
    pub g: M4,
    pub ginv: M4,
    pub k: V4,
    pub k_up: V4,
    pub dk: M4,
    pub christoffel: T3,
    pub d_christoffel: T4,
    pub gamma: T3,
    pub d_gamma: T4,
}

fn delta(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

impl PointGeometry {
    /// `None` when the metric is singular.
    pub fn from_jet(j: &PointJet) -> Option<Self> {
        let ginv = invert4(&j.g)?;
        // ∂_m g^{ia} = -g^{ib} ∂_m g_bc g^{ca}
        let mut dginv = ZERO_T3;
        for i in 0..4 {
            for a in 0..4 {
                for m in 0..4 {
                    let mut s = 0.0;
                    for b in 0..4 {
                        if ginv[i][b] == 0.0 {
                            continue;
                        }
                        for c in 0..4 {
                            s += ginv[i][b] * j.dg[b][c][m] * ginv[c][a];
                        }
                    }
                    dginv[i][a][m] = -s;
                }
            }
        }
        // Christoffel symbols of the first kind and their derivatives
        let mut first = ZERO_T3;
        let mut d_first = ZERO_T4;
        for a in 0..4 {
            for k in 0..4 {
                for l in 0..4 {
                    first[a][k][l] = 0.5 * (j.dg[a][k][l] + j.dg[a][l][k] - j.dg[k][l][a]);
                    for m in 0..4 {
                        d_first[a][k][l][m] = 0.5 * (j.ddg[a][k][l][m] + j.ddg[a][l][k][m] - j.ddg[k][l][a][m]);
                    }
                }
            }
        }
        let mut christoffel = ZERO_T3;
        let mut d_christoffel = ZERO_T4;
        for i in 0..4 {
            for k in 0..4 {
                for l in 0..4 {
                    let mut s = 0.0;
                    for a in 0..4 {
                        s += ginv[i][a] * first[a][k][l];
                    }
                    christoffel[i][k][l] = s;
                    for m in 0..4 {
                        let mut d = 0.0;
                        for a in 0..4 {
                            d += dginv[i][a][m] * first[a][k][l] + ginv[i][a] * d_first[a][k][l][m];
                        }
                        d_christoffel[i][k][l][m] = d;
                    }
                }
            }
        }
        let mut k_up = [0.0; 4];
        let mut dk_up = [[0.0; 4]; 4]; // dk_up[i][m] = ∂_m k^i
        for i in 0..4 {
            for a in 0..4 {
                k_up[i] += ginv[i][a] * j.k[a];
                for m in 0..4 {
                    dk_up[i][m] += dginv[i][a][m] * j.k[a] + ginv[i][a] * j.dk[a][m];
                }
            }
        }
        let mut gamma = ZERO_T3;
        let mut d_gamma = ZERO_T4;
        for i in 0..4 {
            for k in 0..4 {
                for l in 0..4 {
                    gamma[i][k][l] = christoffel[i][k][l]
                        - (delta(i, k) * j.k[l] + delta(i, l) * j.k[k] - j.g[k][l] * k_up[i]);
                    for m in 0..4 {
                        d_gamma[i][k][l][m] = d_christoffel[i][k][l][m]
                            - (delta(i, k) * j.dk[l][m] + delta(i, l) * j.dk[k][m]
                                - j.dg[k][l][m] * k_up[i]
                                - j.g[k][l] * dk_up[i][m]);
                    }
                }
            }
        }
        Some(Self { g: j.g, ginv, k: j.k, k_up, dk: j.dk, christoffel, d_christoffel, gamma, d_gamma })
    }
}

/// Weyl connection coefficients at every grid point.
#[derive(Debug, Clone)]
pub struct ConnectionField {
    pub grid: GridSpec,
    /// `gamma[p][i][k][l] = Γ^i_kl` at point `p`.
    pub gamma: Vec<T3>,
    pub christoffel: Vec<T3>,
}

impl ConnectionField {
    pub fn max_abs(&self) -> f64 {
        self.gamma.iter().flat_map(|t| t.iter().flatten().flatten()).fold(0.0, |m, v| if v.is_finite() { m.max(v.abs()) } else { m })
    }

    /// Largest deviation from symmetry in the lower indices.
    pub fn asymmetry(&self) -> f64 {
        let mut out: f64 = 0.0;
        for t in &self.gamma {
            for i in 0..4 {
                for k in 0..4 {
                    for l in 0..k {
                        out = out.max((t[i][k][l] - t[i][l][k]).abs());
                    }
                }
            }
        }
        out
    }
}

pub(crate) fn geometries(w: &WeylStructure) -> Result<Vec<PointGeometry>, GeometryError> {
    let grid = w.grid();
    w.jets()
        .into_par_iter()
        .enumerate()
        .map(|(i, j)| PointGeometry::from_jet(&j).ok_or(GeometryError::DegenerateMetric { point: grid.point(i) }))
        .collect()
}

/// Weyl connection `Γ^i_kl` on the grid.
pub fn weyl_connection(w: &WeylStructure) -> Result<ConnectionField, GeometryError> {
    let geo = geometries(w)?;
    Ok(ConnectionField {
        grid: w.grid().clone(),
        gamma: geo.iter().map(|g| g.gamma).collect(),
        christoffel: geo.iter().map(|g| g.christoffel).collect(),
    })
}

/// Co-covariant derivative of a co-field of rank 0, 1 or 2.
///
/// Partial derivatives come from the grid stencils, the connection from the
/// structure. Each upper slot adds `Γ^a_{cl} f^{..l..}`, each lower slot
/// subtracts `Γ^l_{ac} f_{..l..}`, and the scale term subtracts
/// `n k_c f`. The new derivative index is appended as a lower slot and the
/// power is unchanged.
pub fn co_derivative(f: &CoField, w: &WeylStructure) -> Result<CoField, GeometryError> {
    let rank = f.rank();
    if rank > 2 {
        return Err(GeometryError::UnsupportedRank { rank });
    }
    if f.grid() != w.grid() {
        return Err(GeometryError::GridMismatch);
    }
    let geo = geometries(w)?;
    derivative_with(f, &geo)
}

pub(crate) fn derivative_with(f: &CoField, geo: &[PointGeometry]) -> Result<CoField, GeometryError> {
    let rank = f.rank();
    let grid = f.grid();
    let n = grid.len();
    let power = f.power() as f64;
    let comps = f.components();
    let mut slots = f.slots().to_vec();
    slots.push(Variance::Down);
    let mut out = CoField::zeros(grid, slots, f.power());
    // partial derivatives first, component by component
    let partials: Vec<Vec<V4>> = (0..comps)
        .into_par_iter()
        .map(|c| {
            let vals = f.flat_component(c);
            (0..n)
                .map(|i| {
                    let mut d = [0.0; 4];
                    for co in Coord::ALL {
                        d[co.index()] = grid.d1(vals, i, co);
                    }
                    d
                })
                .collect()
        })
        .collect();
    for c in 0..comps {
        let idx = component_indices(c, rank);
        for der in 0..4 {
            let oc = c * 4 + der;
            let mut col = vec![0.0; n];
            col.par_iter_mut().enumerate().for_each(|(p, v)| {
                let gm = &geo[p].gamma;
                let mut val = partials[c][p][der] - power * geo[p].k[der] * f.flat_component(c)[p];
                for (s, var) in f.slots().iter().enumerate() {
                    let a = idx[s];
                    for l in 0..4 {
                        let mut j = idx.clone();
                        j[s] = l;
                        let fl = f.component(&j)[p];
                        if fl == 0.0 {
                            continue;
                        }
                        match var {
                            Variance::Up => val += gm[a][der][l] * fl,
                            Variance::Down => val -= gm[l][a][der] * fl,
                        }
                    }
                }
                *v = val;
            });
            out.flat_component_mut(oc).copy_from_slice(&col);
        }
    }
    Ok(out)
}
