//! Desk-scale experiments for entropy-driven imitation learning and a
//! hybrid visual-servo manipulation stack on a kinematic conveyor belt.
//!
//! The crate is organized around six subsystems:
//!
//! * [`entropy_maze`] — the 5x5 MazeNav grid task, demonstration generation
//!   with noise knobs, KL-divergence estimation, and closed-form entropies.
//! * [`state_estimation`] — per-axis Gaussian-process regression over
//!   centroid history for position prediction and velocity estimation.
//! * [`tracking_control`] — tracking-action composition and a speed-limited
//!   kinematic end-effector with closed-loop tracking simulation.
//! * [`mixture_policy`] — diagonal Gaussian mixtures, EM fitting, mode
//!   selection, and the two-target multimodal ambiguity demo.
//! * [`memory_cell`] — the gated memory recurrence with exact
//!   backpropagation through time and the digit-recitation toy.
//! * [`conveyor_sim`] — the conveyor-belt world, scripted skills, and the
//!   full track-then-manipulate episode loop.

pub mod conveyor_sim;
pub mod entropy_maze;
pub mod geom;
pub mod memory_cell;
pub mod mixture_policy;
pub mod seed;
pub mod state_estimation;
pub mod tracking_control;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("GP factorization failed on axis {axis}: kernel matrix not positive definite")]
    Factorization { axis: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("infeasible skill script: {0}")]
    InfeasibleScript(String),
}

pub type Result<T> = std::result::Result<T, Error>;
