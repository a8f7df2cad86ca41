//! The step loop shared by every stepper.
//!
//! [`Integrator`] owns a [`Stepper`] and advances it through the
//! attempt / constraint check / error test / retry cycle, keeps the dense
//! output interpolant, locates roots of user functions and exposes the
//! four calling modes of [`EvolveMode`].

use std::collections::VecDeque;

use crate::adaptivity::{
    apply_heuristics, bias_error, error_test, initial_step, propose_step, AdaptivityParams, AttemptOutcome,
    ControllerState, HeuristicFailure, OrderBasis, TestOutcome,
};
use crate::error::{Error, Result};
use crate::interp::{Interpolant, InterpolantKind};
use crate::numerics::{all_finite, error_weights, wrms_unchecked, Tolerances};
use crate::stepper::{StepContext, Stepper, StepperStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolveMode {
    /// Step past `t_out` and return the interpolated solution there.
    Normal,
    /// Take one step; interpolate only if it passed `t_out`.
    OneStep,
    /// Step exactly onto `t_out` and return the internal solution.
    NormalTstop,
    /// Take one step, never past `t_out`.
    OneStepTstop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolveStatus {
    Success,
    TstopReached,
    RootFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    None,
    Positive,
    Negative,
    NonNegative,
    NonPositive,
}

impl Constraint {
    fn violated(self, v: f64) -> bool {
        match self {
            Constraint::None => false,
            Constraint::Positive => !(v > 0.0),
            Constraint::Negative => !(v < 0.0),
            Constraint::NonNegative => !(v >= 0.0),
            Constraint::NonPositive => !(v <= 0.0),
        }
    }
}

/// One constraint-driven retry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRetry {
    pub t: f64,
    pub h_attempted: f64,
    /// Smallest linear-crossing fraction over the violated components.
    pub crossing_fraction: f64,
    pub h_retry: f64,
    pub components: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttemptKind {
    Accepted,
    ErrorFailure,
    SolverFailure,
    ConstraintRetry,
}

/// One step attempt, recorded when the step log is enabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub h: f64,
    /// Unbiased WRMS norm of the embedded difference.
    pub error_norm: Option<f64>,
    pub kind: AttemptKind,
}

/// A located root.
#[derive(Debug, Clone, PartialEq)]
pub struct RootReport {
    pub t: f64,
    /// Component index and crossing direction (+1 rising, −1 falling, 0 touch).
    pub components: Vec<(usize, i8)>,
}

/// Root function `g(t, y) -> out` with `m` components.
pub type RootFn = Box<dyn FnMut(f64, &[f64], &mut [f64]) + Send>;

struct RootState {
    g: RootFn,
    m: usize,
    active: Vec<bool>,
    g_prev: Vec<f64>,
    tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegratorStats {
    pub steps: u64,
    pub attempts: u64,
    pub error_fails: u64,
    /// Recoverable stepper failures (nonlinear solver, non-finite RHS).
    pub solver_fails: u64,
    pub constraint_fails: u64,
    pub g_evals: u64,
    pub roots_found: u64,
    pub h_last: f64,
    pub h_next: f64,
}

/// Root tolerance `100·ε·max(|t_a|, |t_b|)`.
pub fn default_root_tolerance(ta: f64, tb: f64) -> f64 {
    let scale = ta.abs().max(tb.abs()).max((tb - ta).abs());
    100.0 * f64::EPSILON * scale
}

pub struct Integrator {
    stepper: Box<dyn Stepper>,
    n: usize,
    t: f64,
    y: Vec<f64>,
    direction: f64,
    tol: Tolerances,
    params: AdaptivityParams,
    fixed_h: Option<f64>,
    h_init: Option<f64>,
    h_next: Option<f64>,
    controller: ControllerState,
    interp: Interpolant,
    max_steps: u64,
    roots: Option<RootState>,
    pending_roots: VecDeque<RootReport>,
    constraints: Option<Vec<Constraint>>,
    constraint_safety: f64,
    constraint_log: Vec<ConstraintRetry>,
    step_log: Option<Vec<StepRecord>>,
    stats: IntegratorStats,
}

impl std::fmt::Debug for Integrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Integrator")
            .field("n", &self.n)
            .field("t", &self.t)
            .field("fixed_h", &self.fixed_h)
            .field("stats", &self.stats)
            .finish()
    }
}

impl Integrator {
    /// Adaptive stepping; the stepper must provide an embedding.
    pub fn adaptive(stepper: Box<dyn Stepper>, t0: f64, y0: &[f64], tol: Tolerances) -> Result<Self> {
        if stepper.fixed_step_only() {
            return Err(Error::Config("stepper supports fixed steps only".into()));
        }
        if stepper.embedding_order().is_none() {
            return Err(Error::Config("adaptive stepping needs a method with an embedding".into()));
        }
        Self::build(stepper, t0, y0, tol, None)
    }

    /// Fixed step size `h`; tolerances still weight nonlinear solves.
    pub fn fixed(stepper: Box<dyn Stepper>, t0: f64, y0: &[f64], h: f64, tol: Tolerances) -> Result<Self> {
        if !(h.is_finite() && h != 0.0) {
            return Err(Error::Usage(format!("fixed step must be finite and nonzero, got {h}")));
        }
        Self::build(stepper, t0, y0, tol, Some(h.abs()))
    }

    fn build(stepper: Box<dyn Stepper>, t0: f64, y0: &[f64], tol: Tolerances, fixed_h: Option<f64>) -> Result<Self> {
        let n = stepper.dim();
        if y0.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: y0.len(),
            });
        }
        tol.validate(Some(n))?;
        let mut interp = Interpolant::default();
        interp.reset(t0, y0);
        Ok(Integrator {
            stepper,
            n,
            t: t0,
            y: y0.to_vec(),
            direction: 0.0,
            tol,
            params: AdaptivityParams::default(),
            fixed_h,
            h_init: None,
            h_next: None,
            controller: ControllerState::new(),
            interp,
            max_steps: 500,
            roots: None,
            pending_roots: VecDeque::new(),
            constraints: None,
            constraint_safety: 0.9,
            constraint_log: Vec::new(),
            step_log: None,
            stats: IntegratorStats::default(),
        })
    }

    pub fn set_params(&mut self, params: AdaptivityParams) -> Result<()> {
        params.validate()?;
        self.params = params;
        Ok(())
    }

    pub fn params(&self) -> &AdaptivityParams {
        &self.params
    }

    pub fn set_tolerances(&mut self, tol: Tolerances) -> Result<()> {
        tol.validate(Some(self.n))?;
        self.tol = tol;
        Ok(())
    }

    pub fn set_initial_step(&mut self, h: f64) {
        self.h_init = Some(h.abs());
    }

    /// Per-call limit on internal steps.
    pub fn set_max_steps(&mut self, max: u64) {
        self.max_steps = max.max(1);
    }

    pub fn set_interpolant(&mut self, kind: InterpolantKind, degree: usize) -> Result<()> {
        self.interp = Interpolant::new(kind, degree)?;
        self.interp.reset(self.t, &self.y);
        Ok(())
    }

    /// Records every attempt in a log readable through [`step_log`](Self::step_log).
    pub fn enable_step_log(&mut self) {
        self.step_log.get_or_insert_with(Vec::new);
    }

    pub fn step_log(&self) -> &[StepRecord] {
        self.step_log.as_deref().unwrap_or(&[])
    }

    pub fn set_constraints(&mut self, c: Vec<Constraint>) -> Result<()> {
        if c.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                found: c.len(),
            });
        }
        if let Some(i) = (0..self.n).find(|&i| c[i].violated(self.y[i])) {
            return Err(Error::ConstraintAtStart { index: i });
        }
        self.constraints = if c.iter().all(|k| *k == Constraint::None) {
            None
        } else {
            Some(c)
        };
        Ok(())
    }

    pub fn set_constraint_safety(&mut self, safety: f64) -> Result<()> {
        if !(safety > 0.0 && safety <= 1.0) {
            return Err(Error::Config("constraint safety factor must lie in (0, 1]".into()));
        }
        self.constraint_safety = safety;
        Ok(())
    }

    pub fn constraint_log(&self) -> &[ConstraintRetry] {
        &self.constraint_log
    }

    /// Installs `m` root functions. `tol` overrides the default time tolerance.
    pub fn set_roots(&mut self, m: usize, mut g: RootFn, tol: Option<f64>) -> Result<()> {
        if m == 0 {
            self.roots = None;
            return Ok(());
        }
        let mut g_prev = vec![0.0; m];
        g(self.t, &self.y, &mut g_prev);
        self.stats.g_evals += 1;
        if !all_finite(&g_prev) {
            return Err(Error::NonFiniteRoot { t: self.t });
        }
        self.roots = Some(RootState {
            g,
            m,
            active: vec![true; m],
            g_prev,
            tol,
        });
        self.pending_roots.clear();
        Ok(())
    }

    pub fn set_root_active(&mut self, active: Vec<bool>) -> Result<()> {
        match self.roots.as_mut() {
            Some(r) if r.m == active.len() => {
                r.active = active;
                Ok(())
            }
            Some(r) => Err(Error::LengthMismatch {
                expected: r.m,
                found: active.len(),
            }),
            None => Err(Error::Usage("no root functions installed".into())),
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn stats(&self) -> IntegratorStats {
        IntegratorStats {
            h_next: self.h_next.unwrap_or(0.0),
            ..self.stats
        }
    }

    pub fn stepper_stats(&self) -> StepperStats {
        self.stepper.stats()
    }

    pub fn stepper(&self) -> &dyn Stepper {
        self.stepper.as_ref()
    }

    pub fn stepper_mut(&mut self) -> &mut dyn Stepper {
        self.stepper.as_mut()
    }

    pub fn interpolant(&self) -> &Interpolant {
        &self.interp
    }

    pub fn controller(&self) -> &ControllerState {
        &self.controller
    }

    /// Step size the next attempt will start from, if known.
    pub fn next_step_size(&self) -> Option<f64> {
        self.h_next
    }

    /// New initial condition; clears all history and statistics.
    pub fn reinit(&mut self, t0: f64, y0: &[f64]) -> Result<()> {
        self.restart(t0, y0)?;
        self.stats = IntegratorStats::default();
        self.stepper.clear_stats();
        self.constraint_log.clear();
        if let Some(log) = self.step_log.as_mut() {
            log.clear();
        }
        Ok(())
    }

    /// New initial condition; clears history, keeps statistics.
    pub fn reset(&mut self, t0: f64, y0: &[f64]) -> Result<()> {
        self.restart(t0, y0)
    }

    /// New initial condition in the same direction; keeps the step size,
    /// controller history, stepper state and statistics.
    pub fn warm_restart(&mut self, t0: f64, y0: &[f64]) -> Result<()> {
        self.set_state(t0, y0)
    }

    fn restart(&mut self, t0: f64, y0: &[f64]) -> Result<()> {
        self.set_state(t0, y0)?;
        self.direction = 0.0;
        self.h_next = None;
        self.controller.clear();
        self.stepper.reset();
        Ok(())
    }

    fn set_state(&mut self, t0: f64, y0: &[f64]) -> Result<()> {
        if y0.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                found: y0.len(),
            });
        }
        if let Some(c) = &self.constraints {
            if let Some(i) = (0..self.n).find(|&i| c[i].violated(y0[i])) {
                return Err(Error::ConstraintAtStart { index: i });
            }
        }
        self.t = t0;
        self.y.copy_from_slice(y0);
        self.interp.reset(t0, y0);
        self.pending_roots.clear();
        self.refresh_root_baseline()
    }

    /// Changes the problem size, keeping scalar step-size history.
    /// `tol` replaces the tolerances when vector tolerances change length.
    pub fn resize(&mut self, t: f64, y: &[f64], tol: Option<Tolerances>) -> Result<()> {
        let n = y.len();
        let tol = tol.unwrap_or_else(|| self.tol.clone());
        tol.validate(Some(n))?;
        self.stepper.resize(n)?;
        self.n = n;
        self.tol = tol;
        self.t = t;
        self.y = y.to_vec();
        self.interp.reset(t, y);
        if self.constraints.as_ref().is_some_and(|c| c.len() != n) {
            log::warn!("constraints dropped on resize to {n}");
            self.constraints = None;
        }
        self.pending_roots.clear();
        self.refresh_root_baseline()
    }

    fn refresh_root_baseline(&mut self) -> Result<()> {
        if let Some(r) = self.roots.as_mut() {
            (r.g)(self.t, &self.y, &mut r.g_prev);
            self.stats.g_evals += 1;
            if !all_finite(&r.g_prev) {
                return Err(Error::NonFiniteRoot { t: self.t });
            }
        }
        Ok(())
    }

    /// Dense output: `d`-th derivative at `t` within the last step.
    pub fn dense_output(&mut self, t: f64, d: usize, out: &mut [f64]) -> Result<()> {
        self.prepare_interp()?;
        self.interp.evaluate(t, d, out)
    }

    fn prepare_interp(&mut self) -> Result<()> {
        let stepper = &mut self.stepper;
        let mut rhs = |t: f64, y: &[f64], f: &mut [f64]| stepper.full_rhs(t, y, f);
        self.interp.prepare(&mut rhs)?;
        Ok(())
    }

    fn interpolate_into(&mut self, t: f64, out: &mut [f64]) -> Result<()> {
        if t == self.t {
            out.copy_from_slice(&self.y);
            return Ok(());
        }
        self.prepare_interp()?;
        self.interp.evaluate(t, 0, out)
    }

    /// Advances toward `t_out`, writing the returned solution into `y_out`.
    pub fn evolve(&mut self, t_out: f64, mode: EvolveMode, y_out: &mut [f64]) -> Result<(f64, EvolveStatus)> {
        if y_out.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                found: y_out.len(),
            });
        }
        if !t_out.is_finite() {
            return Err(Error::Usage("t_out must be finite".into()));
        }
        if self.direction == 0.0 {
            if t_out == self.t {
                return Err(Error::Usage("t_out equals the initial time".into()));
            }
            self.direction = (t_out - self.t).signum();
        }
        let dir = self.direction;
        let tstop = matches!(mode, EvolveMode::NormalTstop | EvolveMode::OneStepTstop).then_some(t_out);

        // queued roots from the last step come first
        if let Some(r) = self.pending_roots.front() {
            let one_step = matches!(mode, EvolveMode::OneStep | EvolveMode::OneStepTstop);
            if one_step || (r.t - t_out) * dir <= 0.0 {
                let r = self.pending_roots.pop_front().unwrap();
                self.interpolate_into(r.t, y_out)?;
                return Ok((r.t, EvolveStatus::RootFound));
            }
        }

        // t_out already covered by the last step
        if mode == EvolveMode::Normal && self.stats.steps > 0 && (self.t - t_out) * dir >= 0.0 {
            let t_prev = self.interp.t_prev().unwrap_or(self.t);
            if (t_out - t_prev) * dir < 0.0 {
                return Err(Error::Usage(format!("t_out = {t_out} lies behind the last step")));
            }
            self.interpolate_into(t_out, y_out)?;
            return Ok((t_out, EvolveStatus::Success));
        }
        if tstop.is_some() && self.t == t_out {
            y_out.copy_from_slice(&self.y);
            return Ok((t_out, EvolveStatus::TstopReached));
        }
        if (t_out - self.t) * dir < 0.0 {
            return Err(Error::Usage(format!("t_out = {t_out} lies behind t = {}", self.t)));
        }

        let mut taken = 0;
        loop {
            if taken >= self.max_steps {
                y_out.copy_from_slice(&self.y);
                return Err(Error::TooMuchWork(self.max_steps));
            }
            let t_before = self.t;
            self.take_step(t_out - self.t, tstop)?;
            taken += 1;

            if self.roots.is_some() {
                let found = self.find_roots(t_before)?;
                if !found.is_empty() {
                    self.stats.roots_found += found.len() as u64;
                    self.pending_roots.extend(found);
                    let r = self.pending_roots.pop_front().unwrap();
                    self.interpolate_into(r.t, y_out)?;
                    return Ok((r.t, EvolveStatus::RootFound));
                }
            }

            let passed = (self.t - t_out) * dir >= 0.0;
            match mode {
                EvolveMode::Normal if passed => {
                    self.interpolate_into(t_out, y_out)?;
                    return Ok((t_out, EvolveStatus::Success));
                }
                EvolveMode::Normal => {}
                EvolveMode::OneStep => {
                    if passed {
                        self.interpolate_into(t_out, y_out)?;
                        return Ok((t_out, EvolveStatus::Success));
                    }
                    y_out.copy_from_slice(&self.y);
                    return Ok((self.t, EvolveStatus::Success));
                }
                EvolveMode::NormalTstop | EvolveMode::OneStepTstop => {
                    y_out.copy_from_slice(&self.y);
                    if self.t == t_out {
                        return Ok((self.t, EvolveStatus::TstopReached));
                    }
                    if mode == EvolveMode::OneStepTstop {
                        return Ok((self.t, EvolveStatus::Success));
                    }
                }
            }
        }
    }

    fn log(&mut self, rec: StepRecord) {
        if let Some(l) = self.step_log.as_mut() {
            l.push(rec);
        }
    }

    /// One accepted step, retrying as needed. `span` is the signed distance
    /// to the caller's target, used only for the very first step size.
    fn take_step(&mut self, span: f64, tstop: Option<f64>) -> Result<()> {
        let dir = self.direction;
        let w = error_weights(&self.y, &self.tol)?;
        let w = w.as_slice().to_vec();

        let mut h = match (self.fixed_h, self.h_next) {
            (Some(hf), _) => hf * dir,
            (None, Some(h)) => h,
            (None, None) => match self.h_init {
                Some(h0) => h0.min(self.params.h_max) * dir,
                None => {
                    let mut f0 = vec![0.0; self.n];
                    self.stepper.full_rhs(self.t, &self.y, &mut f0)?;
                    self.interp.offer_rhs(self.t, &f0);
                    initial_step(&self.y, &f0, &w, span, &self.params)
                }
            },
        };
        if h.abs() > self.params.h_max {
            h = self.params.h_max * dir;
        }

        let order = match self.params.order_basis {
            OrderBasis::Embedding => self.stepper.embedding_order().unwrap_or(self.stepper.order()),
            OrderBasis::Solution => self.stepper.order(),
        };
        let mut error_fails = 0;
        let mut solver_fails = 0;
        loop {
            let mut clipped = false;
            if let Some(ts) = tstop {
                // a remainder at roundoff level is absorbed into this step
                let slack = 100.0 * f64::EPSILON * self.t.abs().max(ts.abs()).max(h.abs());
                if (self.t + h - ts) * dir >= -slack {
                    h = ts - self.t;
                    clipped = true;
                }
            }
            self.stats.attempts += 1;
            let attempt = {
                let mut ctx = StepContext {
                    interp: &mut self.interp,
                    weights: &w,
                    step: self.stats.steps,
                };
                self.stepper.attempt_step(self.t, h, &self.y, &mut ctx)
            };
            let attempt = match attempt {
                Ok(a) => a,
                Err(e) if e.is_recoverable() => {
                    solver_fails += 1;
                    self.stats.solver_fails += 1;
                    self.log(StepRecord {
                        t: self.t,
                        h,
                        error_norm: None,
                        kind: AttemptKind::SolverFailure,
                    });
                    if self.fixed_h.is_some() {
                        return Err(e);
                    }
                    log::debug!("recoverable failure at t = {}: {e}", self.t);
                    h = self.reduce(h, AttemptOutcome::SolverFailure { count: solver_fails }, solver_fails)?;
                    continue;
                }
                Err(e) => return Err(e),
            };

            if let Some(c) = &self.constraints {
                let mut alpha = f64::INFINITY;
                let mut comps = Vec::new();
                for i in 0..self.n {
                    if c[i].violated(attempt.y[i]) {
                        let (a, b) = (self.y[i], attempt.y[i]);
                        let frac = if a != b { (a / (a - b)).clamp(0.0, 1.0) } else { 1.0 };
                        alpha = alpha.min(frac);
                        comps.push(i);
                    }
                }
                if !comps.is_empty() {
                    solver_fails += 1;
                    self.stats.constraint_fails += 1;
                    self.stepper.request_jacobian_refresh();
                    self.log(StepRecord {
                        t: self.t,
                        h,
                        error_norm: None,
                        kind: AttemptKind::ConstraintRetry,
                    });
                    if solver_fails >= self.params.max_solver_failures {
                        return Err(Error::TooManyConvergenceFailures {
                            t: self.t,
                            count: solver_fails,
                        });
                    }
                    let h_retry = self.constraint_safety * alpha * h;
                    if h_retry.abs() < self.params.h_min || h_retry == 0.0 {
                        return Err(Error::StepSizeUnderflow {
                            t: self.t,
                            h: h_retry,
                            h_min: self.params.h_min,
                        });
                    }
                    self.constraint_log.push(ConstraintRetry {
                        t: self.t,
                        h_attempted: h,
                        crossing_fraction: alpha,
                        h_retry,
                        components: comps,
                    });
                    h = h_retry;
                    continue;
                }
            }

            let (eps, h_new) = if self.fixed_h.is_some() {
                (None, None)
            } else {
                let err = attempt
                    .error
                    .as_ref()
                    .ok_or_else(|| Error::Config("stepper returned no error estimate".into()))?;
                let eps = wrms_unchecked(err, &w);
                let outcome = error_test(eps);
                let biased = bias_error(eps, self.params.bias);
                let raw = if outcome == TestOutcome::Invalid {
                    f64::NAN
                } else {
                    propose_step(
                        self.params.controller,
                        &self.controller.with_current(biased, h),
                        &self.params,
                        order,
                    )
                };
                if outcome != TestOutcome::Accept {
                    error_fails += 1;
                    self.stats.error_fails += 1;
                    self.log(StepRecord {
                        t: self.t,
                        h,
                        error_norm: Some(eps),
                        kind: AttemptKind::ErrorFailure,
                    });
                    let o = if outcome == TestOutcome::Invalid {
                        AttemptOutcome::InvalidEstimate { count: error_fails }
                    } else {
                        AttemptOutcome::ErrorFailure { count: error_fails }
                    };
                    h = match apply_heuristics(raw, h, &self.controller, &self.params, o) {
                        Ok(v) => v,
                        Err(f) => return Err(f.into_error(self.t, h, &self.params, error_fails)),
                    };
                    continue;
                }
                let next = apply_heuristics(
                    raw,
                    h,
                    &self.controller,
                    &self.params,
                    AttemptOutcome::Accepted {
                        failures_in_step: error_fails + solver_fails,
                    },
                );
                self.controller.commit(biased, h);
                (Some(eps), Some(next))
            };

            // accept
            let t_new = if clipped { tstop.unwrap() } else { self.t + h };
            self.log(StepRecord {
                t: self.t,
                h,
                error_norm: eps,
                kind: AttemptKind::Accepted,
            });
            if let Some(f0) = attempt.f_start.as_deref() {
                self.interp.offer_rhs(self.t, f0);
            }
            self.interp.update(t_new, &attempt.y, attempt.f_start.as_deref());
            self.t = t_new;
            self.y = attempt.y;
            self.stats.steps += 1;
            self.stats.h_last = h;
            match h_new {
                None => {}
                Some(Ok(v)) => self.h_next = Some(v),
                Some(Err(f)) => {
                    self.h_next = None;
                    return Err(f.into_error(self.t, h, &self.params, 0));
                }
            }
            return Ok(());
        }
    }

    fn reduce(&mut self, h: f64, outcome: AttemptOutcome, count: usize) -> Result<f64> {
        apply_heuristics(f64::NAN, h, &self.controller, &self.params, outcome).map_err(|f: HeuristicFailure| {
            f.into_error(self.t, h, &self.params, count)
        })
    }

    /// Roots of the active root functions over the step just taken from `t0`.
    fn find_roots(&mut self, t0: f64) -> Result<Vec<RootReport>> {
        let t1 = self.t;
        let dir = self.direction;
        self.prepare_interp()?;
        let Integrator {
            roots,
            interp,
            y,
            stats,
            ..
        } = self;
        let r = roots.as_mut().unwrap();
        let m = r.m;
        let tol = r.tol.unwrap_or_else(|| default_root_tolerance(t0, t1));
        let mut ybuf = vec![0.0; y.len()];
        let mut eval = |t: f64, out: &mut [f64], g: &mut RootFn| -> Result<()> {
            if t == t1 {
                ybuf.copy_from_slice(y);
            } else {
                interp.evaluate(t, 0, &mut ybuf)?;
            }
            g(t, &ybuf, out);
            stats.g_evals += 1;
            if !all_finite(out) {
                return Err(Error::NonFiniteRoot { t });
            }
            Ok(())
        };
        let g_a = r.g_prev.clone();
        let mut g_b = vec![0.0; m];
        eval(t1, &mut g_b, &mut r.g)?;
        let tm = t0 + 0.5 * (t1 - t0);
        let mut g_m = vec![0.0; m];
        eval(tm, &mut g_m, &mut r.g)?;

        let mut found: Vec<(f64, usize, i8)> = Vec::new();
        let mut scratch = vec![0.0; m];
        for i in 0..m {
            if !r.active[i] {
                continue;
            }
            let brackets = [(t0, g_a[i], tm, g_m[i]), (tm, g_m[i], t1, g_b[i])];
            for (k, &(ta, ga, tb, gb)) in brackets.iter().enumerate() {
                // a zero at the step start was reported with the previous step
                if k == 0 && ga == 0.0 {
                    continue;
                }
                if gb == 0.0 && ga != 0.0 {
                    if k == 0 {
                        // exact zero at the midpoint
                        found.push((tb, i, 0));
                        break;
                    }
                    found.push((tb, i, if ga < 0.0 { 1 } else { -1 }));
                    break;
                }
                if ga * gb < 0.0 {
                    let dirn = if ga < 0.0 { 1 } else { -1 };
                    let t_root = illinois(ta, ga, tb, gb, tol, |t| {
                        eval(t, &mut scratch, &mut r.g)?;
                        Ok(scratch[i])
                    })?;
                    found.push((t_root, i, dirn));
                    break;
                }
            }
        }
        r.g_prev = g_b;
        found.sort_by(|a, b| ((a.0 - b.0) * dir).total_cmp(&0.0));
        let mut reports: Vec<RootReport> = Vec::new();
        for (t, i, d) in found {
            match reports.last_mut() {
                Some(last) if (last.t - t).abs() <= tol => last.components.push((i, d)),
                _ => reports.push(RootReport {
                    t,
                    components: vec![(i, d)],
                }),
            }
        }
        Ok(reports)
    }
}

/// Illinois-modified secant on a bracket with `ga·gb < 0`; returns the
/// bracket end on the far side of the crossing once the bracket is below
/// `tol`.
fn illinois(
    mut ta: f64,
    mut ga: f64,
    mut tb: f64,
    mut gb: f64,
    tol: f64,
    mut g: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    for _ in 0..200 {
        if (tb - ta).abs() <= tol {
            break;
        }
        let mut t = tb - gb * (tb - ta) / (gb - ga);
        // keep the secant point strictly inside the bracket
        let lo = ta.min(tb);
        let hi = ta.max(tb);
        let margin = 0.5 * tol;
        if !(t > lo + margin && t < hi - margin) {
            t = 0.5 * (ta + tb);
        }
        let gt = g(t)?;
        if gt == 0.0 {
            return Ok(t);
        }
        if gt * gb < 0.0 {
            ta = tb;
            ga = gb;
            tb = t;
            gb = gt;
        } else {
            tb = t;
            gb = gt;
            ga *= 0.5;
        }
    }
    Ok(tb)
}
