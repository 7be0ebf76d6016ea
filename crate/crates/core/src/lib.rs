//! Integrable Weyl geometry, quantum-mass particle dynamics, wave solvers and
//! ensemble statistics for pilot-wave simulations.

pub mod dynamics;
pub mod ensemble;
pub mod geometry;
pub mod grid;
pub mod scenario;
pub mod verify;
pub mod wave;
