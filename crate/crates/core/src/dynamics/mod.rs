//! Quantum mass, particle equations of motion and guidance.
//!
//! Units default to ħ = c = 1. The metric seen by particles is constant
//! (flat space in possibly non-Cartesian constant coordinates), so the
//! Christoffel term of the equations of motion vanishes.

mod external;
mod guiding;
mod mass;
mod motion;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use external::{ExternalFields, ScalarSource, VectorSource};
pub use guiding::{guiding_velocity, hj_residual, Guidance, GuidanceMode};
pub use mass::{quantum_mass, ClassicalMass, MassModel, MassSample, QuantumMassField};
pub use motion::{
    classical_step, eom_step, integrate, step_for_spacing, write_trajectory_csv, Trajectory, TrajectoryState,
    TrajectoryStatus,
};

use crate::geometry::GeometryError;
use crate::grid::{GridError, V4};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid particle parameters: {0}")]
    Params(String),
    #[error("left the field domain at {x:?}")]
    ExitedDomain { x: V4 },
    #[error("quantum mass squared {mu2:e} is not positive at {x:?}")]
    InvalidMass { x: V4, mu2: f64 },
    #[error("too close to a node at {x:?} (b = {b:e})")]
    NodeProximity { x: V4, b: f64 },
    #[error("momentum is not timelike at {x:?}")]
    NotTimelike { x: V4 },
    #[error("classical scale factor must be positive, got {value} at {x:?}")]
    NonPositiveBeta { x: V4, value: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Particle constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleParams {
    pub m: f64,
    pub e: f64,
    /// Coupling to the inner curvature; `ħ²/6` reproduces the wave equation.
    pub alpha: f64,
    pub hbar: f64,
}

impl Default for ParticleParams {
    fn default() -> Self {
        Self { m: 1.0, e: 1.0, alpha: 1.0 / 6.0, hbar: 1.0 }
    }
}

impl ParticleParams {
    /// Mass `m`, charge `e`, `ħ`, with `α = ħ²/6`.
    pub fn new(m: f64, e: f64, hbar: f64) -> Result<Self, DynamicsError> {
        Self { m, e, alpha: hbar * hbar / 6.0, hbar }.validated()
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validated(self) -> Result<Self, DynamicsError> {
        if !(self.m > 0.0) {
            return Err(DynamicsError::Params(format!("mass must be positive, got {}", self.m)));
        }
        if !(self.hbar > 0.0) {
            return Err(DynamicsError::Params(format!("hbar must be positive, got {}", self.hbar)));
        }
        if !(self.alpha >= 0.0) {
            return Err(DynamicsError::Params(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !self.e.is_finite() {
            return Err(DynamicsError::Params("charge must be finite".into()));
        }
        Ok(self)
    }

    /// `α` that makes the curvature term equal the quantum potential.
    pub fn matched_alpha(&self) -> f64 {
        self.hbar * self.hbar / 6.0
    }
}
