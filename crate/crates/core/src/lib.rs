//! One-step integrators for initial value problems `M y' = f(t, y)` with
//! identity or constant mass matrix.
//!
//! The crate is layered: [`numerics`] and [`tables`] supply vectors, norms,
//! linear algebra and method coefficients; [`adaptivity`], [`interp`] and
//! [`nonlinear`] are the shared infrastructure; [`erk`], [`ark`] and [`mri`]
//! are the steppers; [`integrator`] drives any of them through the
//! attempt/test/retry loop with dense output, events and constraints.

// indexed loops mirror the coefficient formulas; negated comparisons reject NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptivity;
pub mod error;
pub mod integrator;
pub mod interp;
pub mod nonlinear;
pub mod par;
pub mod stepper;
pub mod erk;
pub mod ark;
pub mod mri;
pub mod numerics;
pub mod tables;

pub use error::{ConvergenceFailure, Error, Result, TableError};
