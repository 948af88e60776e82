//! Information cascades in sequential Bayesian learning with fake agents.
//!
//! The crate computes Y-cascade probabilities four ways: a full agent-level
//! Bayesian simulation and exhaustive history oracle ([`agent`]), the reduced
//! random walk with Monte Carlo and exact lattice DP ([`walk`]), and two
//! structural approximations ([`approx`]). [`sweep`] turns any of them into
//! figure data, and [`cli`] exposes everything as the `cascade` binary.

pub mod agent;
pub mod approx;
pub mod cli;
pub mod error;
pub mod model;
pub mod sweep;
pub mod walk;

pub use error::{CascadeError, Result};
pub use model::{DerivedModel, ModelParams, Obs, ThresholdPoint, Value};
pub use walk::{CascadeKind, CascadeOutcome, McEstimate, ProbInterval, WalkState};
