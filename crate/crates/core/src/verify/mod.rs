//! Property checks behind the acceptance criteria.
//!
//! Each check returns a [`CheckOutcome`] holding its measured quantities and
//! the conditions that failed. Wall-clock limits are applied by callers,
//! since timings are not reproducible.

mod analytic;
mod geometry_checks;
mod wave_checks;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analytic::{product_jet, Profile};
pub use geometry_checks::{curvature_identity, geometric_identities, k_field, scale_invariance};
pub use wave_checks::{
    born_rule, classical_limit, equivalence, gaussian_law, non_crossing, norm_conservation, plane_wave_exactness,
    point_mass_control, ConvergenceLevel, GaussianSetup,
};

use crate::dynamics::DynamicsError;
use crate::ensemble::EnsembleError;
use crate::geometry::GeometryError;
use crate::grid::GridError;
use crate::wave::WaveError;

/// Refinement ratio band accepted as second-order convergence
/// (observed order between 1.7 and 2.3).
pub const SECOND_ORDER_BAND: (f64, f64) = (3.249, 4.925);

/// Residuals below this are rounding noise and need no convergence test.
pub const ROUNDING_FLOOR: f64 = 1e-11;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    CurvatureIdentity,
    ScaleInvariance,
    GeometricIdentities,
    Equivalence,
    NormConservation,
    PlaneWave,
    GaussianLaw,
    BornRule,
    NonCrossing,
    ClassicalLimit,
    KField,
    Reproducibility,
}

impl Criterion {
    pub const ALL: [Criterion; 12] = [
        Criterion::CurvatureIdentity,
        Criterion::ScaleInvariance,
        Criterion::GeometricIdentities,
        Criterion::Equivalence,
        Criterion::NormConservation,
        Criterion::PlaneWave,
        Criterion::GaussianLaw,
        Criterion::BornRule,
        Criterion::NonCrossing,
        Criterion::ClassicalLimit,
        Criterion::KField,
        Criterion::Reproducibility,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::CurvatureIdentity => "curvature_identity",
            Criterion::ScaleInvariance => "scale_invariance",
            Criterion::GeometricIdentities => "geometric_identities",
            Criterion::Equivalence => "equivalence",
            Criterion::NormConservation => "norm_conservation",
            Criterion::PlaneWave => "plane_wave",
            Criterion::GaussianLaw => "gaussian_law",
            Criterion::BornRule => "born_rule",
            Criterion::NonCrossing => "non_crossing",
            Criterion::ClassicalLimit => "classical_limit",
            Criterion::KField => "k_field",
            Criterion::Reproducibility => "reproducibility",
        }
    }

    pub fn parse(s: &str) -> Option<Criterion> {
        Criterion::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Position in the acceptance list, starting at 1.
    pub fn number(self) -> usize {
        Criterion::ALL.iter().position(|c| *c == self).expect("listed") + 1
    }

    /// Checks that only need a grid, not a wave evolution.
    pub fn is_geometric(self) -> bool {
        matches!(
            self,
            Criterion::CurvatureIdentity | Criterion::ScaleInvariance | Criterion::GeometricIdentities | Criterion::KField
        )
    }

    /// Wall-clock budget in seconds, where one applies.
    pub fn time_limit(self) -> Option<f64> {
        match self {
            Criterion::CurvatureIdentity => Some(5.0),
            Criterion::Equivalence => Some(60.0),
            Criterion::BornRule => Some(300.0),
            _ => None,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Measured quantities of one check and the conditions that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub criterion: Criterion,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub failures: Vec<String>,
}

impl CheckOutcome {
    pub fn new(criterion: Criterion) -> Self {
        Self { criterion, passed: true, metrics: BTreeMap::new(), failures: Vec::new() }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    /// Record `value` and fail unless `ok`.
    pub fn require(&mut self, name: impl Into<String>, value: f64, ok: bool, condition: &str) {
        let name = name.into();
        if !ok {
            self.failures.push(format!("{name} = {value:.4e} violates {condition}"));
            self.passed = false;
        }
        self.metrics.insert(name, value);
    }

    pub fn fail(&mut self, message: impl Into<String>) {
        self.failures.push(message.into());
        self.passed = false;
    }

    /// Fold another outcome of the same criterion into this one, prefixing
    /// its metric names.
    pub fn merge(&mut self, prefix: &str, other: CheckOutcome) {
        for (k, v) in other.metrics {
            self.metrics.insert(format!("{prefix}.{k}"), v);
        }
        for f in other.failures {
            self.failures.push(format!("{prefix}: {f}"));
        }
        self.passed &= other.passed;
    }

    /// One-line summary of the most telling metrics.
    pub fn summary(&self) -> String {
        let shown: Vec<String> = self.metrics.iter().take(6).map(|(k, v)| format!("{k}={v:.3e}")).collect();
        let mut s = shown.join(" ");
        if self.metrics.len() > 6 {
            s.push_str(&format!(" (+{} more)", self.metrics.len() - 6));
        }
        if !self.failures.is_empty() {
            s.push_str(" | ");
            s.push_str(&self.failures.join("; "));
        }
        s
    }
}

/// Require a refinement ratio inside `band`, unless both values are at
/// rounding level.
pub(crate) fn require_order(out: &mut CheckOutcome, name: &str, coarse: f64, fine: f64, band: (f64, f64)) {
    out.metric(format!("{name}.coarse"), coarse);
    out.metric(format!("{name}.fine"), fine);
    if coarse < ROUNDING_FLOOR && fine < ROUNDING_FLOOR {
        return;
    }
    let ratio = coarse / fine;
    out.require(format!("{name}.ratio"), ratio, ratio >= band.0 && ratio <= band.1, &format!("ratio in [{}, {}]", band.0, band.1));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criterion_names_round_trip() {
        for c in Criterion::ALL {
            assert_eq!(Criterion::parse(c.name()), Some(c));
        }
        assert_eq!(Criterion::KField.number(), 11);
        assert_eq!(Criterion::parse("nope"), None);
    }

    #[test]
    fn order_requirement() {
        let mut o = CheckOutcome::new(Criterion::CurvatureIdentity);
        require_order(&mut o, "a", 4e-3, 1e-3, SECOND_ORDER_BAND);
        assert!(o.passed);
        require_order(&mut o, "b", 1e-13, 2e-13, SECOND_ORDER_BAND);
        assert!(o.passed);
        require_order(&mut o, "c", 2e-3, 1e-3, SECOND_ORDER_BAND);
        assert!(!o.passed);
        assert_eq!(o.failures.len(), 1);
    }
}
