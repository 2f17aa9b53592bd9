//! # flockopt
//!
//! Decentralized energy-optimal flocking for planar double-integrator agents.
//!
//! Each agent repeatedly solves a terminal-cost boundary-value problem for an
//! energy-minimizing trajectory (cubic position polynomials), detects pairwise
//! safety conflicts against its neighbors' planned trajectories, resolves them
//! with matched-velocity constrained arcs, and replans on a receding horizon.
//! A deterministic simulator executes the plans under speed and control
//! saturation and logs trajectories, metrics, and diagnostic events.
//!
//! The crate is organized around the planning pipeline:
//!
//! - [`flock_model`] — domain types, neighborhood geometry, the flocking-error
//!   functional and its terminal gradients,
//! - [`cubic_solver`] — closed-form unconstrained arcs and the two
//!   boundary-value problems (fixed endpoint, free terminal),
//! - [`contact_solver`] — tangency conditions, contact detection, constrained
//!   arcs, and the optimality-residual oracle for the constrained branch,
//! - [`planner`] — per-agent trajectory generation and the replanning loop,
//! - [`sim_engine`] — scenario setup, state propagation, metrics, run logs,
//! - [`cli_io`] — scenario files, log emission, and the CLI entry points.

pub mod cli_io;
pub mod contact_solver;
pub mod cubic_solver;
pub mod error;
pub mod flock_model;
pub mod planner;
pub mod sim_engine;

pub use error::{Error, Result};
pub use flock_model::{AgentState, FlockParams, FlockSnapshot, Mode, Vec2};
