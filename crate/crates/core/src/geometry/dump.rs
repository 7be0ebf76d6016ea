use std::collections::BTreeMap;

use serde::Serialize;

use super::cofield::CoField;
use super::identities::{bianchi_residual_with, integrability_residual, metricity_residual};
use super::{curvature, GeometryError, WeylStructure};
use crate::grid::GridSpec;

/// Range and norm of one field, over finite entries.
#[derive(Debug, Clone, Serialize)]
pub struct FieldSummary {
    pub name: String,
    pub rank: usize,
    pub power: i32,
    pub min: f64,
    pub max: f64,
    /// Root-mean-square over points and components.
    pub rms: f64,
    pub non_finite: usize,
}

impl FieldSummary {
    pub fn of(name: &str, f: &CoField) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let (mut sq, mut n, mut bad) = (0.0, 0usize, 0usize);
        for &v in f.raw() {
            if v.is_finite() {
                min = min.min(v);
                max = max.max(v);
                sq += v * v;
                n += 1;
            } else {
                bad += 1;
            }
        }
        let rms = if n > 0 { (sq / n as f64).sqrt() } else { 0.0 };
        Self { name: name.to_string(), rank: f.rank(), power: f.power(), min, max, rms, non_finite: bad }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometryDump {
    pub grid: GridSpec,
    pub integrable: bool,
    pub b_floor: f64,
    pub fields: Vec<FieldSummary>,
    pub residuals: BTreeMap<String, f64>,
}

/// Summaries of the metric, scale data and curvature plus every identity residual.
pub fn debug_dump(w: &WeylStructure) -> Result<GeometryDump, GeometryError> {
    let bundle = curvature(w)?;
    let mut fields = vec![
        FieldSummary::of("g", &w.sampled_metric()),
        FieldSummary::of("k", &w.sampled_scale_vector()),
    ];
    if let Some(b) = w.scale_factor() {
        fields.push(FieldSummary::of("b", &b));
    }
    fields.push(FieldSummary::of("R", &bundle.scalar()));
    fields.push(FieldSummary::of("R_mn", &bundle.ricci()));

    let mut residuals = BTreeMap::new();
    residuals.insert("integrability".to_string(), integrability_residual(w)?);
    residuals.insert("metricity".to_string(), metricity_residual(w)?);
    residuals.insert("scalar_closed_form".to_string(), bundle.max_over(|p| (p.scalar - p.scalar_closed_form).abs()));
    residuals.insert(
        "trace_contraction".to_string(),
        bundle.max_over(|p| {
            let mut m: f64 = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    m = m.max((p.r3[a][b] - 4.0 * p.f[a][b]).abs());
                }
            }
            m
        }),
    );
    if w.is_integrable() {
        residuals.insert("bianchi".to_string(), bianchi_residual_with(w, &bundle)?);
    }
    Ok(GeometryDump { grid: w.grid().clone(), integrable: w.is_integrable(), b_floor: w.b_floor(), fields, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, Coord};

    #[test]
    fn dump_serializes() {
        let g = GridSpec::line(Coord::X, -1.0, 1.0, 11, Boundary::OneSided).unwrap();
        let w = WeylStructure::flat_with_factor(&g, g.sample(|p| 1.0 + 0.1 * p[1].sin())).unwrap();
        let d = debug_dump(&w).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"bianchi\""));
        assert_eq!(d.fields.len(), 5);
        assert!(d.residuals["integrability"] < 1e-12);
    }
}
