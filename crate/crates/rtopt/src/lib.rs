//! Structural topology optimization on structured grids.
//!
//! The engine evolves a two-valued material distribution (hard phase `chi = 1`,
//! soft phase `chi = beta`) under a prescribed soft-phase volume fraction that
//! grows along a pseudo-time schedule. Each time step solves a fixed-point
//! problem: the elastic state is solved, an energy-like sensitivity field is
//! built, Laplacian-smoothed, and cut at the level that satisfies the volume
//! constraint exactly. A Hamilton-Jacobi level-set driver sharing the same
//! sensitivities is provided as a baseline for iteration-count comparisons.

pub mod elasticity;
pub mod filter;
pub mod geometry;
pub mod levelset;
pub mod mesh;
pub mod optimizer;
pub mod problem;
pub mod sensitivity;
pub mod solver;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("rigid body motion: stiffness matrix is not positive definite ({0})")]
    RigidBodyMotion(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bisection failure: {0}")]
    Bisection(String),
    #[error("non-convergence: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
