//! Zero-inflated categorical data as a missing-data problem.
//!
//! A recorded value `X` equals the true value `X(1)` when an unobserved
//! indicator `R` is 1 and is forced to 0 otherwise. Given a binary proxy `W`
//! of `R`, the crate restores the joint over `(R, X, W, C)`, bounds the
//! proxy channel `q(W | R)` compatible with the recorded law, identifies the
//! full and target laws, and runs sensitivity analyses over the bound.

pub mod dist;
pub mod bounds;
pub mod downstream;
pub mod error;
pub mod estimate;
pub mod graph;
pub mod restore;
pub mod simulate;

pub use dist::*;
pub use error::{Error, Result};

/// Absolute tolerance for structural checks (restriction Z, determinants).
pub const STRUCT_TOL: f64 = 1e-12;

/// Absolute tolerance for validating user-supplied tables.
pub const INPUT_TOL: f64 = 1e-9;
