//! The single-step contract shared by every method.

use crate::error::Result;
use crate::interp::Interpolant;
use crate::mri::InnerStats;
use crate::nonlinear::SolverStats;

/// Right-hand side callback `f(t, y) -> out`.
pub type Rhs = Box<dyn FnMut(f64, &[f64], &mut [f64]) + Send>;

/// Result of one step attempt from `(t, y)` to `t + h`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAttempt {
    pub y: Vec<f64>,
    /// Embedded difference `y − ỹ`; absent for fixed-step methods.
    pub error: Option<Vec<f64>>,
    /// Full right-hand side at the step start, when the method computed it.
    pub f_start: Option<Vec<f64>>,
}

/// Integrator state a stepper may read while attempting a step.
pub struct StepContext<'a> {
    /// Dense output from previous steps, for implicit-stage predictors.
    pub interp: &'a mut Interpolant,
    /// Error weights at the step start.
    pub weights: &'a [f64],
    /// Number of accepted steps so far.
    pub step: u64,
}

/// Evaluation counters of a stepper.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepperStats {
    pub fe_evals: u64,
    pub fi_evals: u64,
    /// Of the above, calls made through [`Stepper::full_rhs`].
    pub full_rhs_calls: u64,
    pub mass_solves: u64,
    pub solver: SolverStats,
}

/// Additive forcing polynomial `r(t) = Σ_k p_k θ^k`, `θ = (t − t0)/scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialForcing {
    pub t0: f64,
    pub scale: f64,
    pub coeffs: Vec<Vec<f64>>,
}

impl PolynomialForcing {
    pub fn zero(t0: f64, scale: f64, n: usize) -> Self {
        PolynomialForcing {
            t0,
            scale,
            coeffs: vec![vec![0.0; n]],
        }
    }

    pub fn theta(&self, t: f64) -> f64 {
        (t - self.t0) / self.scale
    }

    /// `out += r(t)`, Horner in `θ`.
    pub fn add_to(&self, t: f64, out: &mut [f64]) {
        let theta = self.theta(t);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.coeffs.iter().rev() {
                acc = acc * theta + p[i];
            }
            *o += acc;
        }
    }

    pub fn evaluate(&self, t: f64, out: &mut [f64]) {
        out.fill(0.0);
        self.add_to(t, out);
    }
}

pub trait Stepper: Send {
    fn dim(&self) -> usize;

    fn order(&self) -> usize;

    /// `None` when the method has no embedding.
    fn embedding_order(&self) -> Option<usize>;

    fn attempt_step(&mut self, t: f64, h: f64, y: &[f64], ctx: &mut StepContext<'_>) -> Result<StepAttempt>;

    /// Full right-hand side in solution units, forcing included.
    fn full_rhs(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()>;

    fn stats(&self) -> StepperStats;

    fn clear_stats(&mut self);

    /// Rebuilds internal storage for dimension `n`.
    fn resize(&mut self, n: usize) -> Result<()>;

    /// Drops cached solver data such as stored Jacobians.
    fn reset(&mut self) {}

    /// Asks for a fresh Jacobian at the next implicit solve.
    fn request_jacobian_refresh(&mut self) {}

    /// Whether the step size must stay fixed.
    fn fixed_step_only(&self) -> bool {
        false
    }

    /// Installs or removes an additive forcing term.
    fn set_forcing(&mut self, forcing: Option<PolynomialForcing>);

    /// Counters of a nested fast-scale integrator, for multirate steppers.
    fn fast_stats(&self) -> Option<InnerStats> {
        None
    }
}
