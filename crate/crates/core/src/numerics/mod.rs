//! Vectors, matrices, WRMS norms and tolerance-derived weights.

mod matrix;
mod norms;
mod vector;

pub use matrix::{lu_solve, BandedLu, BandedMatrix, DenseLu, DenseMatrix, LuFactors, Matrix};
pub use norms::{
    error_weights, residual_weights, wrms_norm, AbsTol, ConstantMass, MassOperator, Tolerances,
    WeightVector,
};
pub(crate) use norms::wrms_unchecked;
pub use vector::{all_finite, axpy, max_abs, Vector};

/// Unit roundoff for `f64`.
pub const UNIT_ROUNDOFF: f64 = f64::EPSILON;
