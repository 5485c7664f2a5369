//! Solvers for unconstrained nonsmooth convex minimization.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! - [`problems`]: the convex benchmark objectives with exact gradients,
//!   known optimal values and reference starting points.
//! - [`qp`]: an active-set solver for the strictly convex quadratic program
//!   over the unit simplex that yields search directions.
//! - [`bgs`]: the bundle-gradient-sampling method, an outer
//!   gradient-sampling loop with an inner model-improvement loop that uses
//!   subgradient aggregation and adaptive selection of bundle atoms.
//! - [`gs`]: a plain gradient sampling baseline.
//!
//! Both solvers stream one [`trace::IterationTrace`] per step to a
//! [`trace::Observer`], which may stop the run early.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bgs;
mod error;
pub mod gs;
pub mod math;
pub mod problems;
pub mod qp;
pub mod sampling;
pub mod trace;

pub use error::{Error, Result};
pub use problems::{make_problem, GradientMode, Objective, Problem, ProblemId};
pub use trace::{IterationTrace, Observer, StepKind, StopReason};
