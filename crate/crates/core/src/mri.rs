//! Multirate infinitesimal stepper for `y' = f^E(t, y) + f^I(t, y) + f^F(t, y)`.
//!
//! The slow partitions `f^E`, `f^I` advance with a fixed step `H` through
//! the stages of an [`MriCoupling`]. Stages with `Δc > 0` solve the fast
//! problem `v' = f^F(t, v) + r(t)` with a pluggable [`InnerStepper`], where
//! `r` is a polynomial built from stored slow stage values. Stages with
//! `Δc = 0` are ordinary additive Runge–Kutta stages.

use crate::error::{Error, Result};
use crate::integrator::{EvolveMode, EvolveStatus, Integrator};
use crate::interp::Interpolant;
use crate::nonlinear::{
    JacobianFn, JacobianSlot, JacobianStructure, NewtonConfig, NonlinearSolverKind, StageSolver, StageSystem,
};
use crate::numerics::{all_finite, axpy, error_weights, wrms_norm, MassOperator, Tolerances};
use crate::stepper::{PolynomialForcing, Rhs, StepAttempt, StepContext, Stepper, StepperStats};
use crate::tables::{MriCoupling, MriStageKind};

/// Counters reported by an inner integrator, accumulated over fast solves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InnerStats {
    pub steps: u64,
    pub attempts: u64,
    pub error_fails: u64,
    pub solver_fails: u64,
    /// `f^F` evaluations, all partitions of the fast stepper together.
    pub rhs_evals: u64,
    pub nls_iters: u64,
    pub nls_fails: u64,
    pub jac_evals: u64,
    pub lin_setups: u64,
}

/// Fast-scale integrator driven by [`MriStepper`].
///
/// `evolve` must start from the state given to the most recent `reset` (or
/// from where the previous `evolve` ended) and stop exactly at `t_end`.
pub trait InnerStepper: Send {
    fn dim(&self) -> usize;

    /// Makes `(t, v)` the initial condition of the next fast solve.
    fn reset(&mut self, t: f64, v: &[f64]) -> Result<()>;

    /// Integrates `v' = f^F(t, v) + forcing(t)` to `t_end`, writing the end state to `v`.
    fn evolve(&mut self, t_end: f64, forcing: &PolynomialForcing, v: &mut [f64]) -> Result<()>;

    /// `f^F(t, v)` without forcing.
    fn full_rhs(&mut self, t: f64, v: &[f64], out: &mut [f64]) -> Result<()>;

    fn stats(&self) -> InnerStats;

    fn clear_stats(&mut self);

    fn resize(&mut self, n: usize) -> Result<()>;
}

/// Forcing of stage `i` from stored slow stage values `fe[j]`, `fi[j]`, `j < i`.
/// Either list may be empty when the partition is absent.
pub fn build_forcing(
    coupling: &MriCoupling,
    i: usize,
    t: f64,
    h: f64,
    fe: &[Vec<f64>],
    fi: &[Vec<f64>],
    n: usize,
) -> Result<PolynomialForcing> {
    let c = coupling.c();
    let dc = c[i] - c[i - 1];
    if dc <= 0.0 {
        return Err(Error::Usage(format!("stage {i} has no fast interval")));
    }
    let mut coeffs = vec![vec![0.0; n]; coupling.degree_count()];
    for (k, p) in coeffs.iter_mut().enumerate() {
        for j in 0..i {
            if let Some(f) = fe.get(j) {
                let w = coupling.omega(k, i, j);
                if w != 0.0 {
                    axpy(w / dc, f, p);
                }
            }
            if let Some(f) = fi.get(j) {
                let g = coupling.gamma(k, i, j);
                if g != 0.0 {
                    axpy(g / dc, f, p);
                }
            }
        }
    }
    Ok(PolynomialForcing {
        t0: t + c[i - 1] * h,
        scale: dc * h,
        coeffs,
    })
}

pub struct MriStepper {
    coupling: MriCoupling,
    fe: Option<Rhs>,
    fi: Option<Rhs>,
    inner: Box<dyn InnerStepper>,
    n: usize,
    solver: StageSolver,
    fe_k: Vec<Vec<f64>>,
    fi_k: Vec<Vec<f64>>,
    forcing: Option<PolynomialForcing>,
    stats: StepperStats,
    fe_needed: Vec<bool>,
    fi_needed: Vec<bool>,
}

/// Stages whose slow evaluation some later stage reads, per partition.
fn needed_stages(coupling: &MriCoupling) -> (Vec<bool>, Vec<bool>) {
    let s = coupling.stages();
    let used = |w: &dyn Fn(usize, usize, usize) -> f64, j: usize| {
        (j + 1..s).any(|i| (0..coupling.degree_count()).any(|k| w(k, i, j) != 0.0))
    };
    let fe = (0..s).map(|j| used(&|k, i, j| coupling.omega(k, i, j), j)).collect();
    let fi = (0..s).map(|j| used(&|k, i, j| coupling.gamma(k, i, j), j)).collect();
    (fe, fi)
}

impl MriStepper {
    pub fn new(coupling: MriCoupling, fe: Option<Rhs>, fi: Option<Rhs>, inner: Box<dyn InnerStepper>, n: usize) -> Result<Self> {
        if inner.dim() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: inner.dim(),
            });
        }
        if coupling.has_explicit_part() && fe.is_none() && fi.is_none() {
            log::debug!("coupling `{}` has slow weights but no slow partition", coupling.name());
        }
        if coupling.has_implicit_part() && fi.is_none() && fe.is_some() {
            return Err(Error::Config(format!(
                "coupling `{}` has implicit weights but no implicit partition was given",
                coupling.name()
            )));
        }
        let s = coupling.stages();
        let (fe_needed, fi_needed) = needed_stages(&coupling);
        Ok(MriStepper {
            coupling,
            fe,
            fi,
            inner,
            n,
            solver: StageSolver::default(),
            fe_k: vec![vec![0.0; n]; s],
            fi_k: vec![vec![0.0; n]; s],
            forcing: None,
            stats: StepperStats::default(),
            fe_needed,
            fi_needed,
        })
    }

    pub fn with_solver(mut self, kind: NonlinearSolverKind) -> Self {
        self.solver.kind = kind;
        self
    }

    pub fn with_newton_config(mut self, cfg: NewtonConfig) -> Result<Self> {
        cfg.validate()?;
        self.solver.config = cfg;
        Ok(self)
    }

    pub fn linearly_implicit(mut self, on: bool) -> Self {
        self.solver.config.linearly_implicit = on;
        self
    }

    pub fn with_jacobian_structure(mut self, structure: JacobianStructure) -> Self {
        self.solver.slot = JacobianSlot::new(structure);
        self
    }

    pub fn with_jacobian(mut self, jac: JacobianFn) -> Self {
        self.solver.slot = JacobianSlot::new(self.solver.slot.structure()).with_jacobian(jac);
        self
    }

    pub fn coupling(&self) -> &MriCoupling {
        &self.coupling
    }

    pub fn inner(&self) -> &dyn InnerStepper {
        self.inner.as_ref()
    }

    pub fn inner_stats(&self) -> InnerStats {
        self.inner.stats()
    }

    fn eval_slow(&mut self, t: f64, z: &[f64], i: usize) -> Result<()> {
        let on_e = self.fe.is_some();
        if let (Some(f), true) = (self.fe.as_mut(), self.fe_needed[i]) {
            f(t, z, &mut self.fe_k[i]);
            self.stats.fe_evals += 1;
            if let Some(r) = &self.forcing {
                r.add_to(t, &mut self.fe_k[i]);
            }
            if !all_finite(&self.fe_k[i]) {
                return Err(Error::NonFiniteRhs { t });
            }
        }
        if let (Some(f), true) = (self.fi.as_mut(), self.fi_needed[i]) {
            f(t, z, &mut self.fi_k[i]);
            self.stats.fi_evals += 1;
            if let (false, Some(r)) = (on_e, &self.forcing) {
                r.add_to(t, &mut self.fi_k[i]);
            }
            if !all_finite(&self.fi_k[i]) {
                return Err(Error::NonFiniteRhs { t });
            }
        }
        Ok(())
    }

    /// `acc += h Σ_{j<i} (Ω̄_ij fe_j + Γ̄_ij fi_j)`
    fn add_ark_sum(&self, i: usize, h: f64, acc: &mut [f64]) {
        for j in 0..i {
            if self.fe.is_some() {
                axpy(h * self.coupling.explicit_ark_coefficient(i, j), &self.fe_k[j], acc);
            }
            if self.fi.is_some() {
                axpy(h * self.coupling.implicit_ark_coefficient(i, j), &self.fi_k[j], acc);
            }
        }
    }
}

impl Stepper for MriStepper {
    fn dim(&self) -> usize {
        self.n
    }

    fn order(&self) -> usize {
        self.coupling.order()
    }

    fn embedding_order(&self) -> Option<usize> {
        None
    }

    fn fixed_step_only(&self) -> bool {
        true
    }

    fn attempt_step(&mut self, t: f64, h: f64, y: &[f64], ctx: &mut StepContext<'_>) -> Result<StepAttempt> {
        let s = self.coupling.stages();
        let c = self.coupling.c().to_vec();
        let has_slow = self.fe.is_some() || self.fi.is_some();
        let mut z = y.to_vec();
        if has_slow {
            self.eval_slow(t, &z, 0)?;
        }
        for i in 1..s {
            let t_prev = t + c[i - 1] * h;
            let t_stage = t + c[i] * h;
            match self.coupling.stage_kind(i) {
                MriStageKind::FastIvp { .. } => {
                    let fe: &[Vec<f64>] = if self.fe.is_some() { &self.fe_k } else { &[] };
                    let fi: &[Vec<f64>] = if self.fi.is_some() { &self.fi_k } else { &[] };
                    let forcing = build_forcing(&self.coupling, i, t, h, fe, fi, self.n)?;
                    self.inner.reset(t_prev, &z)?;
                    self.inner.evolve(t_stage, &forcing, &mut z).map_err(|e| match e {
                        Error::Inner(_) => e,
                        other => Error::Inner(other.to_string()),
                    })?;
                }
                MriStageKind::ExplicitArk => {
                    self.add_ark_sum(i, h, &mut z);
                }
                MriStageKind::ImplicitArk { diagonal } => {
                    let mut a = z.clone();
                    self.add_ark_sum(i, h, &mut a);
                    let sys = StageSystem {
                        t: t_stage,
                        gamma: h * diagonal,
                        a: &a,
                        mass: &MassOperator::Identity,
                        h,
                        step: ctx.step,
                    };
                    let forcing = self.forcing.as_ref().filter(|_| self.fe.is_none());
                    let fi = self.fi.as_mut().expect("implicit stage needs f^I");
                    let mut closure = |tt: f64, yy: &[f64], out: &mut [f64]| {
                        fi(tt, yy, out);
                        if let Some(r) = forcing {
                            r.add_to(tt, out);
                        }
                    };
                    let before = self.solver.stats();
                    let solved = self.solver.correct(&sys, &mut closure, &mut z, ctx.weights);
                    let after = self.solver.stats();
                    self.stats.fi_evals +=
                        (after.residual_evals - before.residual_evals) + (after.jac_rhs_evals - before.jac_rhs_evals);
                    solved?;
                }
            }
            if !all_finite(&z) {
                return Err(Error::NonFiniteRhs { t: t_stage });
            }
            // the last stage value is the step result and feeds no forcing
            if has_slow && i + 1 < s {
                self.eval_slow(t_stage, &z, i)?;
            }
        }
        Ok(StepAttempt {
            y: z,
            error: None,
            f_start: None,
        })
    }

    fn full_rhs(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.stats.full_rhs_calls += 1;
        self.inner.full_rhs(t, y, out)?;
        let mut tmp = vec![0.0; self.n];
        let on_e = self.fe.is_some();
        if let Some(f) = self.fe.as_mut() {
            f(t, y, &mut tmp);
            self.stats.fe_evals += 1;
            axpy(1.0, &tmp, out);
        }
        if let Some(f) = self.fi.as_mut() {
            f(t, y, &mut tmp);
            self.stats.fi_evals += 1;
            axpy(1.0, &tmp, out);
        }
        if let (true, Some(r)) = (on_e || self.fi.is_some(), &self.forcing) {
            r.add_to(t, out);
        }
        if !all_finite(out) {
            return Err(Error::NonFiniteRhs { t });
        }
        Ok(())
    }

    fn stats(&self) -> StepperStats {
        StepperStats {
            solver: self.solver.stats(),
            ..self.stats
        }
    }

    fn clear_stats(&mut self) {
        self.stats = StepperStats::default();
        self.solver.slot.stats = Default::default();
        self.inner.clear_stats();
    }

    fn resize(&mut self, n: usize) -> Result<()> {
        self.inner.resize(n)?;
        let s = self.coupling.stages();
        self.n = n;
        self.fe_k = vec![vec![0.0; n]; s];
        self.fi_k = vec![vec![0.0; n]; s];
        self.solver.slot.invalidate();
        self.forcing = None;
        Ok(())
    }

    fn reset(&mut self) {
        self.solver.slot.invalidate();
    }

    fn request_jacobian_refresh(&mut self) {
        self.solver.slot.request_refresh();
    }

    fn fast_stats(&self) -> Option<InnerStats> {
        Some(self.inner.stats())
    }

    /// Rides on `f^E`, else on `f^I`; ignored when both are absent.
    fn set_forcing(&mut self, forcing: Option<PolynomialForcing>) {
        self.forcing = forcing;
    }
}

/// Inner stepper backed by an [`Integrator`] over an explicit or additive
/// stepper. Each fast solve runs with stop-at-end semantics.
///
/// By default `reset` keeps the step size and error history of the previous
/// fast solve; with [`IntegratorInner::cold_restarts`] every fast solve
/// starts from scratch and repeated solves are bitwise reproducible.
pub struct IntegratorInner {
    integ: Integrator,
    cold: bool,
}

impl IntegratorInner {
    pub fn new(integ: Integrator) -> Self {
        IntegratorInner { integ, cold: false }
    }

    pub fn cold_restarts(mut self, on: bool) -> Self {
        self.cold = on;
        self
    }

    pub fn integrator(&self) -> &Integrator {
        &self.integ
    }

    pub fn integrator_mut(&mut self) -> &mut Integrator {
        &mut self.integ
    }
}

fn inner_stats_of(st: StepperStats) -> InnerStats {
    InnerStats {
        rhs_evals: st.fe_evals + st.fi_evals,
        nls_iters: st.solver.nls_iters,
        nls_fails: st.solver.nls_fails,
        jac_evals: st.solver.jac_evals,
        lin_setups: st.solver.lin_setups,
        ..InnerStats::default()
    }
}

impl InnerStepper for IntegratorInner {
    fn dim(&self) -> usize {
        self.integ.dim()
    }

    fn reset(&mut self, t: f64, v: &[f64]) -> Result<()> {
        if self.cold {
            self.integ.reset(t, v)
        } else {
            self.integ.warm_restart(t, v)
        }
    }

    fn evolve(&mut self, t_end: f64, forcing: &PolynomialForcing, v: &mut [f64]) -> Result<()> {
        self.integ.stepper_mut().set_forcing(Some(forcing.clone()));
        let result = loop {
            match self.integ.evolve(t_end, EvolveMode::NormalTstop, v) {
                Ok((_, EvolveStatus::TstopReached)) => break Ok(()),
                Ok(_) => continue,
                Err(e) => break Err(e),
            }
        };
        self.integ.stepper_mut().set_forcing(None);
        result
    }

    fn full_rhs(&mut self, t: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
        let st = self.integ.stepper_mut();
        st.set_forcing(None);
        st.full_rhs(t, v, out)
    }

    fn stats(&self) -> InnerStats {
        let s = self.integ.stats();
        InnerStats {
            steps: s.steps,
            attempts: s.attempts,
            error_fails: s.error_fails,
            solver_fails: s.solver_fails,
            ..inner_stats_of(self.integ.stepper_stats())
        }
    }

    fn clear_stats(&mut self) {
        let (t, y) = (self.integ.t(), self.integ.y().to_vec());
        // reinit is the only way to zero the integrator counters
        let _ = self.integ.reinit(t, &y);
    }

    fn resize(&mut self, n: usize) -> Result<()> {
        let t = self.integ.t();
        self.integ.resize(t, &vec![0.0; n], None)
    }
}

/// Minimal fast integrator: an embedded stepper (normally a DIRK) under an
/// elementary-controller loop with no dense output or events. The step
/// size carries over between fast solves.
pub struct DirkLoopInner {
    stepper: Box<dyn Stepper>,
    tol: Tolerances,
    t: f64,
    v: Vec<f64>,
    h: Option<f64>,
    interp: Interpolant,
    stats: InnerStats,
    max_steps: u64,
}

impl DirkLoopInner {
    const SAFETY: f64 = 0.9;
    const MIN_SHRINK: f64 = 0.2;
    const MAX_GROWTH: f64 = 5.0;
    const FAIL_SHRINK: f64 = 0.25;

    pub fn new(stepper: Box<dyn Stepper>, tol: Tolerances) -> Result<Self> {
        if stepper.embedding_order().is_none() {
            return Err(Error::Config("adaptive inner loop needs an embedded method".into()));
        }
        tol.validate(Some(stepper.dim()))?;
        let n = stepper.dim();
        Ok(DirkLoopInner {
            stepper,
            tol,
            t: 0.0,
            v: vec![0.0; n],
            h: None,
            interp: Interpolant::default(),
            stats: InnerStats::default(),
            max_steps: 100_000,
        })
    }

    pub fn set_max_steps(&mut self, m: u64) {
        self.max_steps = m;
    }

    fn factor(&self, eps: f64) -> f64 {
        let p = self.stepper.embedding_order().unwrap_or(1) as f64;
        if eps == 0.0 {
            return Self::MAX_GROWTH;
        }
        (Self::SAFETY * eps.powf(-1.0 / (p + 1.0))).clamp(Self::MIN_SHRINK, Self::MAX_GROWTH)
    }
}

impl InnerStepper for DirkLoopInner {
    fn dim(&self) -> usize {
        self.v.len()
    }

    fn reset(&mut self, t: f64, v: &[f64]) -> Result<()> {
        if v.len() != self.v.len() {
            return Err(Error::LengthMismatch {
                expected: self.v.len(),
                found: v.len(),
            });
        }
        self.t = t;
        self.v.copy_from_slice(v);
        self.interp.reset(t, v);
        self.stepper.reset();
        Ok(())
    }

    fn evolve(&mut self, t_end: f64, forcing: &PolynomialForcing, v: &mut [f64]) -> Result<()> {
        let span = t_end - self.t;
        if span == 0.0 {
            v.copy_from_slice(&self.v);
            return Ok(());
        }
        let dir = span.signum();
        let mut h = self.h.map_or(0.1 * span, |h| dir * h.abs());
        self.stepper.set_forcing(Some(forcing.clone()));
        let mut taken = 0;
        let result = loop {
            let remaining = t_end - self.t;
            if remaining * dir <= 0.0 {
                break Ok(());
            }
            if taken >= self.max_steps {
                break Err(Error::TooMuchWork(self.max_steps));
            }
            let last = (h - remaining) * dir >= 0.0;
            let h_try = if last { remaining } else { h };
            if h_try.abs() <= 16.0 * f64::EPSILON * self.t.abs().max(span.abs()) {
                break Err(Error::StepSizeUnderflow {
                    t: self.t,
                    h: h_try,
                    h_min: 0.0,
                });
            }
            let w = match error_weights(&self.v, &self.tol) {
                Ok(w) => w,
                Err(e) => break Err(e),
            };
            self.stats.attempts += 1;
            let mut ctx = StepContext {
                interp: &mut self.interp,
                weights: w.as_slice(),
                step: self.stats.steps,
            };
            let attempt = match self.stepper.attempt_step(self.t, h_try, &self.v, &mut ctx) {
                Ok(a) => a,
                Err(e) if e.is_recoverable() => {
                    self.stats.solver_fails += 1;
                    self.stepper.request_jacobian_refresh();
                    h = h_try * Self::FAIL_SHRINK;
                    continue;
                }
                Err(e) => break Err(e),
            };
            let eps = match wrms_norm(attempt.error.as_deref().unwrap_or(&[]), &w) {
                Ok(e) => e,
                Err(e) => break Err(e),
            };
            let f = self.factor(eps);
            if eps <= 1.0 {
                self.t = if last { t_end } else { self.t + h_try };
                self.v = attempt.y;
                self.interp.reset(self.t, &self.v);
                self.stats.steps += 1;
                taken += 1;
                // the clipped final step says nothing about the next one
                if !last || f < 1.0 {
                    h = h_try * f;
                }
            } else {
                self.stats.error_fails += 1;
                h = h_try * f.min(1.0);
            }
        };
        self.h = Some(h);
        self.stepper.set_forcing(None);
        v.copy_from_slice(&self.v);
        result
    }

    fn full_rhs(&mut self, t: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.stepper.set_forcing(None);
        self.stepper.full_rhs(t, v, out)
    }

    fn stats(&self) -> InnerStats {
        let from_stepper = inner_stats_of(self.stepper.stats());
        InnerStats {
            steps: self.stats.steps,
            attempts: self.stats.attempts,
            error_fails: self.stats.error_fails,
            solver_fails: self.stats.solver_fails,
            ..from_stepper
        }
    }

    fn clear_stats(&mut self) {
        self.stats = InnerStats::default();
        self.stepper.clear_stats();
    }

    fn resize(&mut self, n: usize) -> Result<()> {
        self.stepper.resize(n)?;
        self.v = vec![0.0; n];
        self.interp.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ark::ArkStepper;
    use crate::erk::ErkStepper;
    use crate::tables::{catalog, mis_to_mri};
    use proptest::prelude::*;

    fn tol(r: f64, a: f64) -> Tolerances {
        Tolerances::new(r, a).unwrap()
    }

    fn erk_inner(f: impl FnMut(f64, &[f64], &mut [f64]) + Send + 'static, n: usize, rtol: f64) -> IntegratorInner {
        let st = ErkStepper::new(catalog::butcher("cash_karp_5_4").unwrap(), Box::new(f), n).unwrap();
        let mut integ = Integrator::adaptive(Box::new(st), 0.0, &vec![0.0; n], tol(rtol, rtol * 1e-2)).unwrap();
        integ.set_max_steps(100_000);
        IntegratorInner::new(integ)
    }

    fn dirk_inner(f: impl FnMut(f64, &[f64], &mut [f64]) + Send + 'static, n: usize, rtol: f64) -> DirkLoopInner {
        let st = ArkStepper::dirk(catalog::butcher("ark324l2sa_dirk_3_2").unwrap(), Box::new(f), n).unwrap();
        DirkLoopInner::new(Box::new(st), tol(rtol, rtol * 1e-2)).unwrap()
    }

    fn one_step(st: &mut MriStepper, t: f64, h: f64, y: &[f64]) -> Vec<f64> {
        let mut interp = Interpolant::default();
        let w = vec![1.0; y.len()];
        let mut ctx = StepContext {
            interp: &mut interp,
            weights: &w,
            step: 0,
        };
        st.attempt_step(t, h, y, &mut ctx).unwrap().y
    }

    fn zero_forcing(n: usize) -> PolynomialForcing {
        PolynomialForcing::zero(0.0, 1.0, n)
    }

    #[test]
    fn forcing_from_single_prior_stage_is_constant() {
        let m = catalog::coupling("mis_forward_euler_1").unwrap();
        let fe = vec![vec![3.0, -1.0], vec![0.0, 0.0]];
        let r = build_forcing(&m, 1, 0.0, 0.5, &fe, &[], 2).unwrap();
        let mut out = [0.0; 2];
        for t in [0.0, 0.2, 0.5] {
            r.evaluate(t, &mut out);
            assert_eq!(out, [3.0, -1.0]);
        }
        let zero = build_forcing(&m, 1, 0.0, 0.5, &[vec![0.0; 2], vec![0.0; 2]], &[], 2).unwrap();
        zero.evaluate(0.3, &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn linear_forcing_endpoints() {
        let om0 = vec![vec![0.0, 0.0, 0.0], vec![0.5, 0.0, 0.0], vec![0.0, 0.0, 0.0]];
        let om1 = vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0], vec![1.0, -1.0, 0.0]];
        let m = MriCoupling::new(vec![0.0, 0.5, 1.0], vec![om0, om1], vec![], 1).unwrap();
        let fe = vec![vec![2.0], vec![6.0], vec![0.0]];
        let r = build_forcing(&m, 2, 1.0, 0.2, &fe, &[], 1).unwrap();
        // Δc = 0.5 on [1.1, 1.2]: r(θ) = (2 − 6) θ / 0.5
        let mut out = [0.0];
        r.evaluate(1.1, &mut out);
        assert!(out[0].abs() < 1e-14);
        r.evaluate(1.2, &mut out);
        assert!((out[0] + 8.0).abs() < 1e-12);
        r.evaluate(1.15, &mut out);
        assert!((out[0] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn forcing_requires_fast_interval() {
        let z = vec![vec![0.0; 3]; 3];
        let mut om = z.clone();
        om[1][0] = 1.0;
        om[2][1] = 0.5;
        om[2][0] = -0.5;
        let m = MriCoupling::new(vec![0.0, 1.0, 1.0], vec![om], vec![], 2).unwrap();
        assert!(matches!(build_forcing(&m, 2, 0.0, 1.0, &z, &[], 3), Err(Error::Usage(_))));
    }

    #[test]
    fn fast_only_equals_inner_solution() {
        let lambda = -3.0;
        let m = catalog::coupling("mis_forward_euler_1").unwrap();
        let inner = erk_inner(move |_, v, f| f[0] = lambda * v[0], 1, 1e-10);
        let mut st = MriStepper::new(m, None, None, Box::new(inner), 1).unwrap();
        let y = one_step(&mut st, 0.0, 0.5, &[1.0]);
        let mut reference = erk_inner(move |_, v, f| f[0] = lambda * v[0], 1, 1e-10);
        reference.reset(0.0, &[1.0]).unwrap();
        let mut v = [0.0];
        reference.evolve(0.5, &zero_forcing(1), &mut v).unwrap();
        assert_eq!(y[0], v[0]);
        assert!((y[0] - (lambda * 0.5f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn zero_fast_rhs_reduces_to_slow_method() {
        let f = |t: f64, y: &[f64], o: &mut [f64]| {
            o[0] = -y[0] + t.sin();
            o[1] = y[0] * y[1] - t;
        };
        for name in ["knoth_wolke_3", "explicit_trapezoid_2", "heun_euler_2_1", "bogacki_shampine_3_2"] {
            let slow = catalog::butcher(name).unwrap();
            let m = mis_to_mri(&slow).unwrap();
            let inner = erk_inner(|_, _, o| o.fill(0.0), 2, 1e-12);
            let mut st = MriStepper::new(m, Some(Box::new(f)), None, Box::new(inner), 2).unwrap();
            let y0 = [0.7, -0.4];
            let (t, h) = (0.3, 0.2);
            let y = one_step(&mut st, t, h, &y0);
            let mut erk = ErkStepper::new(slow, Box::new(f), 2).unwrap();
            let mut interp = Interpolant::default();
            let mut ctx = StepContext {
                interp: &mut interp,
                weights: &[1.0, 1.0],
                step: 0,
            };
            let r = erk.attempt_step(t, h, &y0, &mut ctx).unwrap();
            for k in 0..2 {
                assert!((y[k] - r.y[k]).abs() <= 1e-12, "{name}: {} vs {}", y[k], r.y[k]);
            }
        }
    }

    #[test]
    fn implicit_slow_stage_solves_with_newton() {
        // one implicit stage after one fast stage: backward Euler in the slow partition
        let z = vec![vec![0.0; 3]; 3];
        let mut g = z.clone();
        g[2][2] = 1.0;
        let m = MriCoupling::new(vec![0.0, 1.0, 1.0], vec![], vec![g], 1).unwrap();
        let lambda = -50.0;
        let inner = erk_inner(|_, _, o| o.fill(0.0), 1, 1e-10);
        let mut st = MriStepper::new(m, None, Some(Box::new(move |_, y, o| o[0] = lambda * y[0])), Box::new(inner), 1).unwrap();
        let h = 0.1;
        let y = one_step(&mut st, 0.0, h, &[1.0]);
        assert!((y[0] - 1.0 / (1.0 - h * lambda)).abs() < 1e-12);
        assert!(st.stats().solver.nls_iters >= 1);
    }

    #[test]
    fn inner_conformance() {
        let lambda = -2.0;
        let inners: Vec<Box<dyn InnerStepper>> = vec![
            Box::new(erk_inner(move |_, v, f| f[0] = lambda * v[0], 1, 1e-9)),
            Box::new(erk_inner(move |_, v, f| f[0] = lambda * v[0], 1, 1e-9).cold_restarts(true)),
            Box::new(dirk_inner(move |_, v, f| f[0] = lambda * v[0], 1, 1e-7)),
        ];
        for mut inner in inners {
            inner.reset(0.0, &[1.0]).unwrap();
            let mut v = [0.0];
            inner.evolve(0.1, &zero_forcing(1), &mut v).unwrap();
            assert!((v[0] - (lambda * 0.1f64).exp()).abs() < 1e-6, "{}", v[0]);
            inner.reset(0.0, &[1.0]).unwrap();
            let mut v2 = [0.0];
            inner.evolve(0.1, &zero_forcing(1), &mut v2).unwrap();
            assert!((v2[0] - v[0]).abs() < 1e-7);
            let forcing = PolynomialForcing {
                t0: 0.0,
                scale: 1.0,
                coeffs: vec![vec![5.0]],
            };
            inner.reset(0.0, &[1.0]).unwrap();
            inner.evolve(0.1, &forcing, &mut v2).unwrap();
            let mut out = [0.0];
            inner.full_rhs(0.0, &[1.0], &mut out).unwrap();
            assert_eq!(out[0], lambda);
            assert!(inner.stats().steps > 0);
        }
    }

    #[test]
    fn cold_restart_is_reproducible() {
        let mut inner = erk_inner(|t, v, f| f[0] = -v[0] * t.cos(), 1, 1e-6).cold_restarts(true);
        let forcing = PolynomialForcing {
            t0: 0.0,
            scale: 0.5,
            coeffs: vec![vec![1.0], vec![-2.0]],
        };
        let mut runs = Vec::new();
        for _ in 0..2 {
            inner.reset(0.0, &[1.0]).unwrap();
            let mut v = [0.0];
            inner.evolve(0.5, &forcing, &mut v).unwrap();
            runs.push(v[0].to_bits());
        }
        assert_eq!(runs[0], runs[1]);
        assert_eq!(inner.stats().steps % 2, 0);
    }

    struct BrokenReset(IntegratorInner);

    impl InnerStepper for BrokenReset {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn reset(&mut self, _t: f64, _v: &[f64]) -> Result<()> {
            Ok(())
        }
        fn evolve(&mut self, t_end: f64, forcing: &PolynomialForcing, v: &mut [f64]) -> Result<()> {
            self.0.evolve(t_end, forcing, v)
        }
        fn full_rhs(&mut self, t: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
            self.0.full_rhs(t, v, out)
        }
        fn stats(&self) -> InnerStats {
            self.0.stats()
        }
        fn clear_stats(&mut self) {
            self.0.clear_stats()
        }
        fn resize(&mut self, n: usize) -> Result<()> {
            self.0.resize(n)
        }
    }

    #[test]
    fn broken_reset_breaks_equivalence() {
        let f = |_: f64, y: &[f64], o: &mut [f64]| o[0] = -y[0];
        let slow = catalog::butcher("knoth_wolke_3").unwrap();
        let inner = BrokenReset(erk_inner(|_, _, o| o.fill(0.0), 1, 1e-12));
        let mut st = MriStepper::new(mis_to_mri(&slow).unwrap(), Some(Box::new(f)), None, Box::new(inner), 1).unwrap();
        let y = one_step(&mut st, 0.0, 0.2, &[1.0]);
        let mut erk = ErkStepper::new(slow, Box::new(f), 1).unwrap();
        let mut interp = Interpolant::default();
        let mut ctx = StepContext {
            interp: &mut interp,
            weights: &[1.0],
            step: 0,
        };
        let r = erk.attempt_step(0.0, 0.2, &[1.0], &mut ctx).unwrap();
        assert!((y[0] - r.y[0]).abs() > 1e-6);
    }

    #[test]
    fn slow_statistics_independent_of_inner() {
        let slow_f = |t: f64, y: &[f64], o: &mut [f64]| {
            o[0] = -0.5 * y[1] + t.cos();
            o[1] = 0.5 * y[0];
        };
        let fast_f = |_: f64, y: &[f64], o: &mut [f64]| {
            o[0] = -20.0 * y[0];
            o[1] = -20.0 * (y[1] - y[0]);
        };
        let run = |inner: Box<dyn InnerStepper>| {
            let m = catalog::coupling("mis_kw3").unwrap();
            let st = MriStepper::new(m, Some(Box::new(slow_f)), None, inner, 2).unwrap();
            let mut integ = Integrator::fixed(Box::new(st), 0.0, &[1.0, 1.0], 0.05, tol(1e-6, 1e-8)).unwrap();
            let mut y = [0.0; 2];
            integ.evolve(1.0, EvolveMode::NormalTstop, &mut y).unwrap();
            (integ.stats().steps, integ.stepper_stats().fe_evals, y)
        };
        let (s1, fe1, y1) = run(Box::new(erk_inner(fast_f, 2, 1e-8)));
        let (s2, fe2, y2) = run(Box::new(dirk_inner(fast_f, 2, 1e-8)));
        assert_eq!((s1, fe1), (s2, fe2));
        assert_eq!(s1, 20);
        assert!((y1[0] - y2[0]).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn forcing_conservation_telescopes(
            name in prop::sample::select(vec!["knoth_wolke_3", "heun_euler_2_1", "bogacki_shampine_3_2", "explicit_trapezoid_2"]),
            data in prop::collection::vec(-10.0f64..10.0, 6),
            h in 0.01f64..2.0,
        ) {
            let slow = catalog::butcher(name).unwrap();
            let m = mis_to_mri(&slow).unwrap();
            let s = m.stages();
            let fe: Vec<Vec<f64>> = (0..s).map(|j| vec![data[j % data.len()]]).collect();
            let mut total = 0.0;
            for i in 1..s {
                let dc = m.c()[i] - m.c()[i - 1];
                if dc > 0.0 {
                    let r = build_forcing(&m, i, 0.0, h, &fe, &[], 1).unwrap();
                    total += dc * r.coeffs[0][0];
                } else {
                    for j in 0..i {
                        total += m.explicit_ark_coefficient(i, j) * fe[j][0];
                    }
                }
            }
            let expected: f64 = (0..slow.stages()).map(|j| slow.b()[j] * fe[j][0]).sum();
            prop_assert!((total - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }
}
