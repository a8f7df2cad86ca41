//! Implicit-stage solvers.
//!
//! Every implicit stage solves `M (z − a) − γ f^I(t, z) = 0` for `z`,
//! starting from a predictor built on the dense-output interpolant. Newton
//! iterations run on a lagged, factored iteration matrix `M − γ̃ J` held in a
//! [`JacobianSlot`] that is rebuilt only when the reuse policy says so.

use crate::error::{ConvergenceFailure, Error, Result};
use crate::interp::{Interpolant, RhsCallback};
use crate::numerics::{
    all_finite, wrms_unchecked, BandedMatrix, DenseMatrix, LuFactors, MassOperator, Matrix,
    UNIT_ROUNDOFF,
};

/// Right-hand side `f(t, y) -> out`.
pub type RhsMut<'a> = dyn FnMut(f64, &[f64], &mut [f64]) + 'a;

/// Analytic Jacobian hook: fills `J(t, y)`, which arrives zeroed with the
/// slot's structure.
pub type JacobianFn = Box<dyn FnMut(f64, &[f64], &mut Matrix) + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonlinearSolverKind {
    #[default]
    Newton,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonConfig {
    pub max_iters: usize,
    pub fixed_point_max_iters: usize,
    /// Converged when `δ·min(1, rate) ≤ tol_coef`.
    pub tol_coef: f64,
    pub rate_memory: f64,
    pub divergence: f64,
    pub max_steps_between_setups: u64,
    pub max_steps_between_jacobians: u64,
    /// Relative change in `γ` that forces a re-factorization.
    pub gamma_change: f64,
    /// Treat `f^I` as linear in `y`: a single iteration, no test.
    pub linearly_implicit: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_iters: 3,
            fixed_point_max_iters: 10,
            tol_coef: 0.1,
            rate_memory: 0.3,
            divergence: 2.3,
            max_steps_between_setups: 20,
            max_steps_between_jacobians: 51,
            gamma_change: 0.2,
            linearly_implicit: false,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.fixed_point_max_iters > 0
            && self.tol_coef > 0.0
            && self.rate_memory > 0.0
            && self.divergence > 0.0
            && self.max_steps_between_setups > 0
            && self.max_steps_between_jacobians > 0
            && self.gamma_change > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("nonlinear solver parameters must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianStructure {
    #[default]
    Dense,
    Banded { ml: usize, mu: usize },
}

/// One implicit stage equation.
#[derive(Debug, Clone, Copy)]
pub struct StageSystem<'a> {
    pub t: f64,
    pub gamma: f64,
    pub a: &'a [f64],
    pub mass: &'a MassOperator,
    /// Step size, only used to scale finite-difference increments.
    pub h: f64,
    /// Index of the step this stage belongs to, for the reuse policy.
    pub step: u64,
}

/// Counters kept by the implicit machinery.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub nls_iters: u64,
    pub nls_fails: u64,
    pub lin_setups: u64,
    pub jac_evals: u64,
    /// `f^I` calls made for Newton or fixed-point residuals.
    pub residual_evals: u64,
    /// `f^I` calls made for finite-difference Jacobians.
    pub jac_rhs_evals: u64,
}

/// Lagged Jacobian and factored iteration matrix.
pub struct JacobianSlot {
    structure: JacobianStructure,
    jac: Option<Matrix>,
    lu: Option<LuFactors>,
    gamma_tilde: f64,
    setup_step: u64,
    jac_step: u64,
    rate: f64,
    refresh_requested: bool,
    user_jac: Option<JacobianFn>,
    pub stats: SolverStats,
}

impl std::fmt::Debug for JacobianSlot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JacobianSlot")
            .field("structure", &self.structure)
            .field("gamma_tilde", &self.gamma_tilde)
            .field("setup_step", &self.setup_step)
            .field("jac_step", &self.jac_step)
            .field("has_factors", &self.lu.is_some())
            .field("stats", &self.stats)
            .finish()
    }
}

/// What [`JacobianSlot::needs_setup`] decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetupDecision {
    Reuse,
    /// Re-factor `M − γ J` with the stored `J`.
    Refactor,
    /// Re-evaluate `J`, then re-factor.
    Reevaluate,
}

impl JacobianSlot {
    pub fn new(structure: JacobianStructure) -> Self {
        JacobianSlot {
            structure,
            jac: None,
            lu: None,
            gamma_tilde: 0.0,
            setup_step: 0,
            jac_step: 0,
            rate: 1.0,
            refresh_requested: false,
            user_jac: None,
            stats: SolverStats::default(),
        }
    }

    pub fn with_jacobian(mut self, jac: JacobianFn) -> Self {
        self.user_jac = Some(jac);
        self
    }

    pub fn structure(&self) -> JacobianStructure {
        self.structure
    }

    /// Forces a fresh Jacobian at the next setup check.
    pub fn request_refresh(&mut self) {
        self.refresh_requested = true;
    }

    /// Drops stored matrices, keeping counters.
    pub fn invalidate(&mut self) {
        self.jac = None;
        self.lu = None;
        self.rate = 1.0;
    }

    pub fn gamma_tilde(&self) -> f64 {
        self.gamma_tilde
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Reuse policy: re-factor after `max_steps_between_setups` steps or a
    /// relative change in `γ` above `gamma_change`; re-evaluate `J` when none
    /// is stored, a refresh was requested, or it is older than
    /// `max_steps_between_jacobians` steps.
    pub fn needs_setup(&self, step: u64, gamma: f64, cfg: &NewtonConfig) -> SetupDecision {
        let jac_stale = self.jac.is_none()
            || self.refresh_requested
            || step.saturating_sub(self.jac_step) >= cfg.max_steps_between_jacobians;
        if jac_stale {
            return SetupDecision::Reevaluate;
        }
        let threshold = if cfg.linearly_implicit { 0.0 } else { cfg.gamma_change };
        if self.lu.is_none()
            || step.saturating_sub(self.setup_step) >= cfg.max_steps_between_setups
            || (gamma / self.gamma_tilde - 1.0).abs() > threshold
        {
            SetupDecision::Refactor
        } else {
            SetupDecision::Reuse
        }
    }

    /// Applies [`needs_setup`](Self::needs_setup); `fz = f^I(t, z)` is the
    /// base point for differencing. Returns whether anything was rebuilt.
    pub fn maybe_refresh(
        &mut self,
        sys: &StageSystem<'_>,
        fi: &mut RhsMut<'_>,
        z: &[f64],
        fz: &[f64],
        w: &[f64],
        cfg: &NewtonConfig,
    ) -> Result<bool> {
        match self.needs_setup(sys.step, sys.gamma, cfg) {
            SetupDecision::Reuse => Ok(false),
            SetupDecision::Refactor => {
                self.setup(sys, fi, z, fz, w, false)?;
                Ok(true)
            }
            SetupDecision::Reevaluate => {
                self.setup(sys, fi, z, fz, w, true)?;
                Ok(true)
            }
        }
    }

    fn setup(
        &mut self,
        sys: &StageSystem<'_>,
        fi: &mut RhsMut<'_>,
        z: &[f64],
        fz: &[f64],
        w: &[f64],
        fresh: bool,
    ) -> Result<()> {
        if fresh || self.jac.is_none() {
            let j = match self.user_jac.as_mut() {
                Some(user) => {
                    let mut m = empty_matrix(self.structure, z.len());
                    user(sys.t, z, &mut m);
                    m
                }
                None => {
                    let (m, evals) = fd_jacobian(fi, sys.t, z, fz, w, sys.h, self.structure)?;
                    self.stats.jac_rhs_evals += evals as u64;
                    m
                }
            };
            self.stats.jac_evals += 1;
            self.jac = Some(j);
            self.jac_step = sys.step;
            self.refresh_requested = false;
        }
        let a = iteration_matrix(self.jac.as_ref().unwrap(), sys.gamma, sys.mass);
        self.stats.lin_setups += 1;
        self.lu = None;
        self.lu = Some(a.lu()?);
        self.gamma_tilde = sys.gamma;
        self.setup_step = sys.step;
        self.rate = 1.0;
        Ok(())
    }
}

fn empty_matrix(structure: JacobianStructure, n: usize) -> Matrix {
    match structure {
        JacobianStructure::Dense => Matrix::Dense(DenseMatrix::zeros(n, n)),
        JacobianStructure::Banded { ml, mu } => Matrix::Banded(BandedMatrix::zeros(n, ml, mu)),
    }
}

/// `M − γ J`, in `J`'s storage when `M` fits in it, dense otherwise.
fn iteration_matrix(jac: &Matrix, gamma: f64, mass: &MassOperator) -> Matrix {
    let n = jac.dim();
    let mut a = jac.clone();
    match &mut a {
        Matrix::Dense(d) => d.scale(-gamma),
        Matrix::Banded(b) => b.scale(-gamma),
    }
    match mass {
        MassOperator::Identity => {
            for i in 0..n {
                match &mut a {
                    Matrix::Dense(d) => d.add(i, i, 1.0),
                    Matrix::Banded(b) => b.add(i, i, 1.0),
                }
            }
            a
        }
        MassOperator::Constant(m) => {
            let fits = match (&a, m.matrix()) {
                (Matrix::Banded(b), mm) => (0..n).all(|i| (0..n).all(|j| b.in_band(i, j) || mm.get(i, j) == 0.0)),
                _ => true,
            };
            let mut a = if fits {
                a
            } else if let Matrix::Banded(b) = &a {
                Matrix::Dense(b.to_dense())
            } else {
                unreachable!()
            };
            for i in 0..n {
                for j in 0..n {
                    let v = m.matrix().get(i, j);
                    if v != 0.0 {
                        match &mut a {
                            Matrix::Dense(d) => d.add(i, j, v),
                            Matrix::Banded(b) => b.add(i, j, v),
                        }
                    }
                }
            }
            a
        }
    }
}

/// Forward-difference Jacobian of `f` at `(t, z)` with `fz = f(t, z)`.
///
/// Column `j` uses increment `max(√u·|z_j|, m/w_j)` with
/// `m = 1000·|h|·u·N·‖fz‖_w` (or 1 when that norm vanishes). Banded
/// structure perturbs `ml+mu+1` interleaved column groups at once. Returns
/// the matrix and the number of `f` calls.
pub fn fd_jacobian(
    f: &mut RhsMut<'_>,
    t: f64,
    z: &[f64],
    fz: &[f64],
    w: &[f64],
    h: f64,
    structure: JacobianStructure,
) -> Result<(Matrix, usize)> {
    let n = z.len();
    let srur = UNIT_ROUNDOFF.sqrt();
    let fnorm = wrms_unchecked(fz, w);
    let min_inc = if fnorm != 0.0 {
        1000.0 * h.abs() * UNIT_ROUNDOFF * n as f64 * fnorm
    } else {
        1.0
    };
    let inc = |j: usize| (srur * z[j].abs()).max(min_inc / w[j]);
    let mut zp = z.to_vec();
    let mut fp = vec![0.0; n];
    let mut evals = 0;
    match structure {
        JacobianStructure::Dense => {
            let mut m = DenseMatrix::zeros(n, n);
            for j in 0..n {
                let dj = inc(j);
                zp[j] = z[j] + dj;
                f(t, &zp, &mut fp);
                evals += 1;
                zp[j] = z[j];
                if !all_finite(&fp) {
                    return Err(Error::NonFiniteRhs { t });
                }
                for i in 0..n {
                    m.set(i, j, (fp[i] - fz[i]) / dj);
                }
            }
            Ok((Matrix::Dense(m), evals))
        }
        JacobianStructure::Banded { ml, mu } => {
            let mut m = BandedMatrix::zeros(n, ml, mu);
            let width = (ml + mu + 1).min(n);
            let mut incs = vec![0.0; n];
            for g in 0..width {
                for j in (g..n).step_by(width) {
                    incs[j] = inc(j);
                    zp[j] = z[j] + incs[j];
                }
                f(t, &zp, &mut fp);
                evals += 1;
                if !all_finite(&fp) {
                    return Err(Error::NonFiniteRhs { t });
                }
                for j in (g..n).step_by(width) {
                    zp[j] = z[j];
                    let lo = j.saturating_sub(mu);
                    let hi = (j + ml).min(n - 1);
                    for i in lo..=hi {
                        m.set(i, j, (fp[i] - fz[i]) / incs[j]);
                    }
                }
            }
            Ok((Matrix::Banded(m), evals))
        }
    }
}

/// Result of one stage solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iters: usize,
    /// Last observed ratio of successive correction norms.
    pub rate: f64,
    /// Whether a Jacobian was evaluated during this solve.
    pub fresh_jacobian: bool,
}

/// `out = M (z − a) − γ f`
fn residual(sys: &StageSystem<'_>, z: &[f64], f: &[f64], tmp: &mut [f64], out: &mut [f64]) {
    for ((t, zi), ai) in tmp.iter_mut().zip(z).zip(sys.a) {
        *t = zi - ai;
    }
    sys.mass.apply(tmp, out);
    for (o, fi) in out.iter_mut().zip(f) {
        *o -= sys.gamma * fi;
    }
}

/// Modified Newton iteration on the stage equation. `z` holds the predictor
/// on entry and the solution on success. A failure with a lagged Jacobian is
/// retried once with a fresh one; the slot is flagged for refresh after any
/// failure.
pub fn newton_solve(
    sys: &StageSystem<'_>,
    fi: &mut RhsMut<'_>,
    z: &mut [f64],
    cfg: &NewtonConfig,
    slot: &mut JacobianSlot,
    w: &[f64],
) -> Result<SolveReport> {
    if sys.gamma == 0.0 {
        z.copy_from_slice(sys.a);
        return Ok(SolveReport {
            iters: 0,
            rate: 0.0,
            fresh_jacobian: false,
        });
    }
    let n = z.len();
    let zp = z.to_vec();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut retried = false;
    let mut total_iters = 0;
    loop {
        let jac_evals_before = slot.stats.jac_evals;
        let outcome = newton_iterate(sys, fi, z, cfg, slot, w, &mut f, &mut g, &mut tmp, &mut total_iters);
        let fresh = slot.stats.jac_evals > jac_evals_before;
        match outcome {
            Ok(rate) => {
                return Ok(SolveReport {
                    iters: total_iters,
                    rate,
                    fresh_jacobian: fresh,
                })
            }
            Err(e) => {
                let recoverable = matches!(
                    e,
                    Error::Convergence(_) | Error::SingularMatrix { .. }
                );
                if recoverable && !fresh && !retried {
                    retried = true;
                    slot.request_refresh();
                    z.copy_from_slice(&zp);
                    continue;
                }
                slot.stats.nls_fails += 1;
                slot.request_refresh();
                return Err(match e {
                    Error::SingularMatrix { .. } => Error::Convergence(ConvergenceFailure::LinearSolve),
                    other => other,
                });
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn newton_iterate(
    sys: &StageSystem<'_>,
    fi: &mut RhsMut<'_>,
    z: &mut [f64],
    cfg: &NewtonConfig,
    slot: &mut JacobianSlot,
    w: &[f64],
    f: &mut [f64],
    g: &mut [f64],
    tmp: &mut [f64],
    total_iters: &mut usize,
) -> Result<f64> {
    let mut del_prev = 0.0;
    let mut last_ratio = 0.0;
    let max_iters = if cfg.linearly_implicit { 1 } else { cfg.max_iters };
    for m in 0..max_iters {
        fi(sys.t, z, f);
        slot.stats.residual_evals += 1;
        if !all_finite(f) {
            return Err(Error::NonFiniteRhs { t: sys.t });
        }
        if m == 0 {
            slot.maybe_refresh(sys, fi, z, f, w, cfg)?;
        }
        residual(sys, z, f, tmp, g);
        g.iter_mut().for_each(|v| *v = -*v);
        slot.lu.as_ref().expect("iteration matrix set up").solve_in_place(g);
        let ratio = sys.gamma / slot.gamma_tilde;
        if ratio != 1.0 {
            let scale = 2.0 / (1.0 + ratio);
            g.iter_mut().for_each(|v| *v *= scale);
        }
        for (zi, d) in z.iter_mut().zip(g.iter()) {
            *zi += d;
        }
        *total_iters += 1;
        slot.stats.nls_iters += 1;
        if cfg.linearly_implicit {
            return Ok(0.0);
        }
        let del = wrms_unchecked(g, w);
        if m > 0 {
            last_ratio = del / del_prev;
            slot.rate = (cfg.rate_memory * slot.rate).max(last_ratio);
        }
        if del * slot.rate.min(1.0) <= cfg.tol_coef || del == 0.0 {
            return Ok(last_ratio);
        }
        if m > 0 && last_ratio > cfg.divergence {
            return Err(Error::Convergence(ConvergenceFailure::Diverged));
        }
        del_prev = del;
    }
    Err(Error::Convergence(ConvergenceFailure::MaxIterations))
}

/// Plain fixed-point iteration `z ← a + γ M⁻¹ f^I(t, z)`.
pub fn fixed_point_solve(
    sys: &StageSystem<'_>,
    fi: &mut RhsMut<'_>,
    z: &mut [f64],
    cfg: &NewtonConfig,
    w: &[f64],
    stats: &mut SolverStats,
) -> Result<SolveReport> {
    if sys.gamma == 0.0 {
        z.copy_from_slice(sys.a);
        stats.nls_iters += 1;
        return Ok(SolveReport {
            iters: 1,
            rate: 0.0,
            fresh_jacobian: false,
        });
    }
    let n = z.len();
    let mut f = vec![0.0; n];
    let mut rate: f64 = 1.0;
    let mut del_prev = 0.0;
    let mut last_ratio = 0.0;
    for m in 0..cfg.fixed_point_max_iters {
        fi(sys.t, z, &mut f);
        stats.residual_evals += 1;
        if !all_finite(&f) {
            stats.nls_fails += 1;
            return Err(Error::NonFiniteRhs { t: sys.t });
        }
        sys.mass.solve_in_place(&mut f);
        let mut sum = 0.0;
        for i in 0..n {
            let znew = sys.a[i] + sys.gamma * f[i];
            let d = znew - z[i];
            z[i] = znew;
            let p = d * w[i];
            sum += p * p;
        }
        stats.nls_iters += 1;
        let del = (sum / n as f64).sqrt();
        if m > 0 {
            last_ratio = del / del_prev;
            rate = (cfg.rate_memory * rate).max(last_ratio);
        }
        if del * rate.min(1.0) <= cfg.tol_coef || del == 0.0 {
            return Ok(SolveReport {
                iters: m + 1,
                rate: last_ratio,
                fresh_jacobian: false,
            });
        }
        // a non-contracting map cannot converge
        if m > 0 && last_ratio >= 1.0 {
            stats.nls_fails += 1;
            return Err(Error::Convergence(ConvergenceFailure::Diverged));
        }
        del_prev = del;
    }
    stats.nls_fails += 1;
    Err(Error::Convergence(ConvergenceFailure::MaxIterations))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictorKind {
    #[default]
    Trivial,
    MaxOrder,
    VariableOrder,
    Cutoff,
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trivial" | "t" => Ok(PredictorKind::Trivial),
            "max-order" | "maxorder" | "m" => Ok(PredictorKind::MaxOrder),
            "variable-order" | "variable" | "v" => Ok(PredictorKind::VariableOrder),
            "cutoff" | "c" => Ok(PredictorKind::Cutoff),
            _ => Err(Error::Usage(format!("unknown predictor `{s}`"))),
        }
    }
}

/// User hook run after the built-in predictor: `(t_stage, stage_index, z)`.
pub type UserPredictor = Box<dyn FnMut(f64, usize, &mut [f64]) + Send>;

/// Degree used by `kind` for the `stage`-th stage (1-based) at `t_stage`;
/// `None` means copy the last stored solution.
pub fn predictor_degree(kind: PredictorKind, interp: &Interpolant, t_stage: f64, stage: usize, xi_max: usize) -> Option<usize> {
    let xi_max = xi_max.min(interp.available_degree());
    if kind == PredictorKind::Trivial || xi_max == 0 {
        return None;
    }
    Some(match kind {
        PredictorKind::Trivial => unreachable!(),
        PredictorKind::MaxOrder => xi_max,
        PredictorKind::VariableOrder => xi_max.saturating_sub(stage).max(1),
        PredictorKind::Cutoff => {
            let (t1, t0) = (interp.t_last().unwrap(), interp.t_prev().unwrap());
            let tau = (t_stage - t1) / (t1 - t0);
            if tau < 0.5 {
                xi_max
            } else {
                1
            }
        }
    })
}

/// Predictor for the `stage`-th implicit stage (1-based). `xi_max` should
/// already be capped by `min(q − 1, 5)`; the interpolant's own degree caps it
/// further. `y_last` is the solution at the start of the step. Returns the
/// number of `rhs` calls spent completing interpolant data.
#[allow(clippy::too_many_arguments)]
pub fn predict(
    kind: PredictorKind,
    interp: &mut Interpolant,
    rhs: &mut RhsCallback<'_>,
    t_stage: f64,
    stage: usize,
    xi_max: usize,
    y_last: &[f64],
    out: &mut [f64],
) -> Result<usize> {
    match predictor_degree(kind, interp, t_stage, stage, xi_max) {
        None => {
            out.copy_from_slice(y_last);
            Ok(0)
        }
        Some(deg) => {
            let evals = interp.prepare_degree(deg, rhs)?;
            interp.evaluate_degree(t_stage, 0, deg, out)?;
            Ok(evals)
        }
    }
}

/// Predictor plus nonlinear solver for one stepper's implicit stages.
pub struct StageSolver {
    pub kind: NonlinearSolverKind,
    pub config: NewtonConfig,
    pub predictor: PredictorKind,
    pub slot: JacobianSlot,
    user_predictor: Option<UserPredictor>,
}

impl std::fmt::Debug for StageSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StageSolver")
            .field("kind", &self.kind)
            .field("config", &self.config)
            .field("predictor", &self.predictor)
            .field("slot", &self.slot)
            .finish()
    }
}

impl Default for StageSolver {
    fn default() -> Self {
        StageSolver::new(JacobianStructure::Dense)
    }
}

impl StageSolver {
    pub fn new(structure: JacobianStructure) -> Self {
        StageSolver {
            kind: NonlinearSolverKind::Newton,
            config: NewtonConfig::default(),
            predictor: PredictorKind::Trivial,
            slot: JacobianSlot::new(structure),
            user_predictor: None,
        }
    }

    pub fn set_user_predictor(&mut self, p: Option<UserPredictor>) {
        self.user_predictor = p;
    }

    pub fn stats(&self) -> SolverStats {
        self.slot.stats
    }

    /// Writes the predictor for the `stage`-th stage (1-based) into `z`.
    /// `rhs` is the full right-hand side used to complete interpolant data.
    #[allow(clippy::too_many_arguments)]
    pub fn predict(
        &mut self,
        interp: &mut Interpolant,
        rhs: &mut RhsCallback<'_>,
        t_stage: f64,
        stage: usize,
        xi_max: usize,
        y_last: &[f64],
        z: &mut [f64],
    ) -> Result<usize> {
        let evals = predict(self.predictor, interp, rhs, t_stage, stage, xi_max, y_last, z)?;
        if let Some(p) = self.user_predictor.as_mut() {
            p(t_stage, stage, z);
        }
        Ok(evals)
    }

    /// Solves the stage starting from the predictor in `z`.
    pub fn correct(&mut self, sys: &StageSystem<'_>, fi: &mut RhsMut<'_>, z: &mut [f64], w: &[f64]) -> Result<SolveReport> {
        match self.kind {
            NonlinearSolverKind::Newton => newton_solve(sys, fi, z, &self.config, &mut self.slot, w),
            NonlinearSolverKind::FixedPoint => fixed_point_solve(sys, fi, z, &self.config, w, &mut self.slot.stats),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::InterpolantKind;

    fn scalar_system<'a>(gamma: f64, a: &'a [f64], mass: &'a MassOperator) -> StageSystem<'a> {
        StageSystem {
            t: 0.3,
            gamma,
            a,
            mass,
            h: 0.1,
            step: 0,
        }
    }

    #[test]
    fn gamma_zero_returns_known_data() {
        let mass = MassOperator::Identity;
        let a = [3.0, -1.0];
        let sys = scalar_system(0.0, &a, &mass);
        let mut z = [0.0, 0.0];
        let mut slot = JacobianSlot::new(JacobianStructure::Dense);
        let mut f = |_: f64, _: &[f64], _: &mut [f64]| panic!("no evaluation expected");
        let r = newton_solve(&sys, &mut f, &mut z, &NewtonConfig::default(), &mut slot, &[1.0, 1.0]).unwrap();
        assert_eq!(z, a);
        assert_eq!(r.iters, 0);
        let mut z = [0.0, 0.0];
        let mut st = SolverStats::default();
        fixed_point_solve(&sys, &mut f, &mut z, &NewtonConfig::default(), &[1.0, 1.0], &mut st).unwrap();
        assert_eq!(z, a);
    }

    #[test]
    fn newton_exact_on_linear_problem_after_first_iteration() {
        let lambda = -50.0;
        let mass = MassOperator::Identity;
        let a = [1.0];
        let sys = scalar_system(0.1, &a, &mass);
        let mut f = |_: f64, y: &[f64], out: &mut [f64]| out[0] = lambda * y[0];
        let mut slot = JacobianSlot::new(JacobianStructure::Dense);
        let mut z = [1.0];
        let cfg = NewtonConfig::default();
        let r = newton_solve(&sys, &mut f, &mut z, &cfg, &mut slot, &[1e4]).unwrap();
        let exact = 1.0 / (1.0 - 0.1 * lambda);
        assert!((z[0] - exact).abs() < 1e-12);
        assert!(r.iters <= 2);
        // linearly implicit: exactly one
        let lin = NewtonConfig {
            linearly_implicit: true,
            ..cfg
        };
        let mut slot = JacobianSlot::new(JacobianStructure::Dense);
        let mut z = [1.0];
        let r = newton_solve(&sys, &mut f, &mut z, &lin, &mut slot, &[1e4]).unwrap();
        assert_eq!(r.iters, 1);
        assert!((z[0] - exact).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_contraction_and_divergence() {
        let mass = MassOperator::Identity;
        let a = [1.0];
        let mut f = |_: f64, y: &[f64], out: &mut [f64]| out[0] = -y[0];
        let cfg = NewtonConfig {
            fixed_point_max_iters: 50,
            tol_coef: 1e-8,
            ..Default::default()
        };
        let mut st = SolverStats::default();
        let mut z = [0.0];
        let r = fixed_point_solve(&scalar_system(0.5, &a, &mass), &mut f, &mut z, &cfg, &[1.0], &mut st).unwrap();
        assert!((r.rate - 0.5).abs() < 1e-12);
        assert!((z[0] - 1.0 / 1.5).abs() < 1e-8);
        let mut z = [0.0];
        let err = fixed_point_solve(&scalar_system(2.0, &a, &mass), &mut f, &mut z, &cfg, &[1.0], &mut st);
        assert_eq!(err, Err(Error::Convergence(ConvergenceFailure::Diverged)));
    }

    #[test]
    fn fd_jacobian_dense_linear() {
        let a = [[2.0, -1.0, 0.5], [0.0, 3.0, 1.0], [4.0, 0.0, -2.0]];
        let mut f = |_: f64, y: &[f64], out: &mut [f64]| {
            for i in 0..3 {
                out[i] = (0..3).map(|j| a[i][j] * y[j]).sum();
            }
        };
        let z = [1.0, -2.0, 0.5];
        let mut fz = [0.0; 3];
        f(0.0, &z, &mut fz);
        let (j, evals) = fd_jacobian(&mut f, 0.0, &z, &fz, &[1e6; 3], 1e-2, JacobianStructure::Dense).unwrap();
        assert_eq!(evals, 3);
        for i in 0..3 {
            for k in 0..3 {
                assert!((j.get(i, k) - a[i][k]).abs() <= 1e-6 * a[i][k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn fd_jacobian_banded_groups() {
        let n = 10;
        let mut f = |_: f64, y: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { y[i - 1] } else { 0.0 };
                let r = if i + 1 < n { y[i + 1] } else { 0.0 };
                out[i] = l - 2.0 * y[i] + r;
            }
        };
        let z: Vec<f64> = (0..n).map(|i| i as f64 + 1.0).collect();
        let mut fz = vec![0.0; n];
        f(0.0, &z, &mut fz);
        let s = JacobianStructure::Banded { ml: 1, mu: 1 };
        let (j, evals) = fd_jacobian(&mut f, 0.0, &z, &fz, &vec![1.0; n], 0.1, s).unwrap();
        assert_eq!(evals, 3);
        for i in 0..n {
            assert!((j.get(i, i) + 2.0).abs() < 1e-5);
            if i + 1 < n {
                assert!((j.get(i, i + 1) - 1.0).abs() < 1e-5);
                assert!((j.get(i + 1, i) - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn fd_jacobian_of_constant_is_zero() {
        let mut f = |_: f64, _: &[f64], out: &mut [f64]| out.fill(7.0);
        let z = [1.0, 2.0];
        let (j, _) = fd_jacobian(&mut f, 0.0, &z, &[7.0, 7.0], &[1.0, 1.0], 0.1, JacobianStructure::Dense).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert_eq!(j.get(i, k), 0.0);
            }
        }
    }

    #[test]
    fn reuse_policy() {
        let cfg = NewtonConfig::default();
        let mut slot = JacobianSlot::new(JacobianStructure::Dense);
        assert_eq!(slot.needs_setup(0, 1.0, &cfg), SetupDecision::Reevaluate);
        let mass = MassOperator::Identity;
        let a = [0.0];
        let sys = StageSystem {
            gamma: 1.0,
            ..scalar_system(1.0, &a, &mass)
        };
        let mut f = |_: f64, y: &[f64], out: &mut [f64]| out[0] = -y[0];
        slot.maybe_refresh(&sys, &mut f, &[1.0], &[-1.0], &[1.0], &cfg).unwrap();
        let evals = slot.stats.jac_rhs_evals;
        assert_eq!(slot.needs_setup(5, 1.1, &cfg), SetupDecision::Reuse);
        assert_eq!(slot.needs_setup(21, 1.0, &cfg), SetupDecision::Refactor);
        assert_eq!(slot.needs_setup(5, 1.25, &cfg), SetupDecision::Refactor);
        assert_eq!(slot.needs_setup(60, 1.0, &cfg), SetupDecision::Reevaluate);
        let sys5 = StageSystem { step: 5, gamma: 1.1, ..sys };
        assert!(!slot.maybe_refresh(&sys5, &mut f, &[1.0], &[-1.0], &[1.0], &cfg).unwrap());
        assert_eq!(slot.stats.jac_rhs_evals, evals);
        slot.request_refresh();
        assert_eq!(slot.needs_setup(5, 1.0, &cfg), SetupDecision::Reevaluate);
    }

    #[test]
    fn predictor_rules() {
        let mut it = Interpolant::new(InterpolantKind::Hermite, 5).unwrap();
        let mut rhs = |_: f64, y: &[f64], f: &mut [f64]| {
            f[0] = y[0];
            Ok(())
        };
        let mut out = [0.0];
        // empty history: trivial
        it.reset(0.0, &[1.0]);
        predict(PredictorKind::MaxOrder, &mut it, &mut rhs, 0.5, 2, 3, &[1.0], &mut out).unwrap();
        assert_eq!(out, [1.0]);
        it.update(1.0, &[2.0], None);
        assert_eq!(predictor_degree(PredictorKind::Trivial, &it, 1.2, 1, 3), None);
        assert_eq!(predictor_degree(PredictorKind::MaxOrder, &it, 1.2, 1, 3), Some(3));
        assert_eq!(predictor_degree(PredictorKind::VariableOrder, &it, 1.2, 5, 3), Some(1));
        assert_eq!(predictor_degree(PredictorKind::VariableOrder, &it, 1.2, 1, 3), Some(2));
        assert_eq!(predictor_degree(PredictorKind::Cutoff, &it, 1.6, 2, 3), Some(1));
        assert_eq!(predictor_degree(PredictorKind::Cutoff, &it, 1.4, 2, 3), Some(3));
        predict(PredictorKind::Trivial, &mut it, &mut rhs, 1.5, 2, 3, &[2.0], &mut out).unwrap();
        assert_eq!(out, [2.0]);
        // degree-1 extrapolation of the line through (0,1), (1,2)
        predict(PredictorKind::Cutoff, &mut it, &mut rhs, 1.6, 2, 3, &[2.0], &mut out).unwrap();
        assert!((out[0] - 2.6).abs() < 1e-14);
    }

    fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(lo) * g(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn newton_matches_bisection_on_cubic() {
        let (a, gamma) = (2.0, 0.4);
        let oracle = bisect(|z| z - a + gamma * z * z * z, 0.0, a);
        let mass = MassOperator::Identity;
        let av = [a];
        let sys = scalar_system(gamma, &av, &mass);
        let mut f = |_: f64, y: &[f64], out: &mut [f64]| out[0] = -y[0].powi(3);
        let cfg = NewtonConfig {
            max_iters: 20,
            tol_coef: 1e-10,
            ..Default::default()
        };
        let mut slot = JacobianSlot::new(JacobianStructure::Dense);
        let mut z = [1.2];
        newton_solve(&sys, &mut f, &mut z, &cfg, &mut slot, &[1.0]).unwrap();
        assert!((z[0] - oracle).abs() < 1e-9, "{} vs {oracle}", z[0]);
    }

    #[test]
    fn lagged_jacobian_within_threshold_converges() {
        let mass = MassOperator::Identity;
        let a = [1.0, 0.5];
        let mut f = |_: f64, y: &[f64], out: &mut [f64]| {
            out[0] = -3.0 * y[0] + y[1];
            out[1] = -y[1] - 0.1 * y[0];
        };
        let cfg = NewtonConfig::default();
        let mut slot = JacobianSlot::new(JacobianStructure::Dense);
        let w = [1e4, 1e4];
        let mut z = [1.0, 0.5];
        newton_solve(&scalar_system(0.22, &a, &mass), &mut f, &mut z, &cfg, &mut slot, &w).unwrap();
        assert_eq!(slot.stats.jac_evals, 1);
        let mut z = [1.0, 0.5];
        let sys = StageSystem { step: 1, ..scalar_system(0.2, &a, &mass) };
        newton_solve(&sys, &mut f, &mut z, &cfg, &mut slot, &w).unwrap();
        assert_eq!(slot.stats.jac_evals, 1);
        assert_eq!(slot.stats.lin_setups, 1);
        let mut g = [0.0; 2];
        f(0.0, &z, &mut g);
        for i in 0..2 {
            assert!((z[i] - a[i] - 0.2 * g[i]).abs() < 1e-4);
        }
    }
}
