//! Local error test, biased error history and step-size controllers.
//!
//! Step proposals are split in two: [`propose_step`] applies the raw
//! controller law, [`apply_heuristics`] clamps the result according to the
//! outcome of the attempt. Acceptance ([`error_test`]) never looks at either.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Biased errors are floored here before exponentiation.
pub const ERROR_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ControllerKind {
    #[default]
    Pid,
    Pi,
    I,
    ExplicitGustafsson,
    ImplicitGustafsson,
    ImexGustafsson,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 6] = [
        ControllerKind::Pid,
        ControllerKind::Pi,
        ControllerKind::I,
        ControllerKind::ExplicitGustafsson,
        ControllerKind::ImplicitGustafsson,
        ControllerKind::ImexGustafsson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Pid => "pid",
            ControllerKind::Pi => "pi",
            ControllerKind::I => "i",
            ControllerKind::ExplicitGustafsson => "expgus",
            ControllerKind::ImplicitGustafsson => "impgus",
            ControllerKind::ImexGustafsson => "imexgus",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown controller `{s}`")))
    }
}

/// Exponent gains of each controller law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    pub i: f64,
    pub pi: (f64, f64),
    pub pid: (f64, f64, f64),
    pub explicit_gustafsson: (f64, f64),
    pub implicit_gustafsson: (f64, f64),
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            i: 1.0,
            pi: (0.8, 0.31),
            pid: (0.58, 0.21, 0.10),
            explicit_gustafsson: (0.367, 0.268),
            implicit_gustafsson: (0.98, 0.95),
        }
    }
}

/// Which order the controller exponent `1/(order+1)` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderBasis {
    #[default]
    Embedding,
    Solution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptivityParams {
    pub controller: ControllerKind,
    pub gains: ControllerGains,
    pub bias: f64,
    pub safety: f64,
    /// Largest growth factor after an ordinary accepted step.
    pub max_growth: f64,
    /// Largest growth factor after the very first step.
    pub first_step_growth: f64,
    /// Largest factor after an error test failure.
    pub error_fail_cap: f64,
    /// Smallest reduction factor after any failure.
    pub min_reduction: f64,
    /// Factor applied after a failed implicit solve.
    pub solver_fail_factor: f64,
    /// Consecutive error failures after which `min_reduction` is forced.
    pub failures_before_floor: usize,
    pub max_error_failures: usize,
    pub max_solver_failures: usize,
    pub h_min: f64,
    pub h_max: f64,
    pub order_basis: OrderBasis,
}

impl Default for AdaptivityParams {
    fn default() -> Self {
        AdaptivityParams {
            controller: ControllerKind::Pid,
            gains: ControllerGains::default(),
            bias: 1.5,
            safety: 0.96,
            max_growth: 20.0,
            first_step_growth: 10_000.0,
            error_fail_cap: 0.3,
            min_reduction: 0.1,
            solver_fail_factor: 0.25,
            failures_before_floor: 3,
            max_error_failures: 7,
            max_solver_failures: 10,
            h_min: 0.0,
            h_max: f64::INFINITY,
            order_basis: OrderBasis::Embedding,
        }
    }
}

impl AdaptivityParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.bias > 1.0) {
            return bad("error bias must exceed 1");
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad("safety factor must lie in (0, 1]");
        }
        if !(self.min_reduction > 0.0
            && self.min_reduction <= self.error_fail_cap
            && self.min_reduction <= self.solver_fail_factor
            && self.error_fail_cap <= 1.0
            && self.solver_fail_factor <= 1.0)
        {
            return bad("need 0 < min_reduction <= failure factors <= 1");
        }
        if !(self.max_growth >= 1.0 && self.first_step_growth >= 1.0) {
            return bad("growth limits must be at least 1");
        }
        if !(self.h_min >= 0.0 && self.h_max > self.h_min) {
            return bad("need 0 <= h_min < h_max");
        }
        if self.max_error_failures == 0 || self.max_solver_failures == 0 {
            return bad("failure limits must be positive");
        }
        Ok(())
    }
}

/// Biased error and step-size history, most recent first.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerState {
    eps: [Option<f64>; 3],
    h: [Option<f64>; 3],
    steps_taken: u64,
}

impl ControllerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    /// History with `(eps, h)` of the attempt in hand pushed in front.
    pub fn with_current(&self, eps: f64, h: f64) -> Self {
        ControllerState {
            eps: [Some(eps), self.eps[0], self.eps[1]],
            h: [Some(h), self.h[0], self.h[1]],
            steps_taken: self.steps_taken,
        }
    }

    /// Makes the attempt in hand part of the accepted history.
    pub fn commit(&mut self, eps: f64, h: f64) {
        *self = self.with_current(eps, h);
        self.steps_taken += 1;
    }

    pub fn eps(&self, lag: usize) -> Option<f64> {
        self.eps[lag]
    }

    pub fn h(&self, lag: usize) -> Option<f64> {
        self.h[lag]
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// Last accepted step size.
    pub fn last_h(&self) -> Option<f64> {
        if self.steps_taken > 0 {
            self.h[0]
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestOutcome {
    Accept,
    Reject,
    /// Estimate was NaN or infinite.
    Invalid,
}

pub fn error_test(t_norm: f64) -> TestOutcome {
    if !t_norm.is_finite() {
        TestOutcome::Invalid
    } else if t_norm <= 1.0 {
        TestOutcome::Accept
    } else {
        TestOutcome::Reject
    }
}

pub fn bias_error(t_norm: f64, bias: f64) -> f64 {
    bias * t_norm
}

/// Raw controller proposal. `st` must hold the attempt in hand at lag 0
/// (see [`ControllerState::with_current`]); laws needing absent history
/// fall back to the I law.
pub fn propose_step(kind: ControllerKind, st: &ControllerState, params: &AdaptivityParams, order: usize) -> f64 {
    let h = st.h[0].expect("controller needs the current step");
    let e0 = st.eps[0].expect("controller needs the current error").max(ERROR_FLOOR);
    let e1 = st.eps[1].map(|e| e.max(ERROR_FLOOR));
    let e2 = st.eps[2].map(|e| e.max(ERROR_FLOOR));
    let k = (order + 1) as f64;
    let s = params.safety;
    let g = &params.gains;
    let i_law = h * s * e0.powf(-g.i / k);
    let explicit_gus = |e1: f64| {
        let (k1, k2) = g.explicit_gustafsson;
        h * s * e0.powf(-k1 / k) * (e0 / e1).powf(-k2 / k)
    };
    let implicit_gus = |e1: f64, h1: f64| {
        let (k1, k2) = g.implicit_gustafsson;
        h * s * (h / h1) * e0.powf(-k1 / k) * (e0 / e1).powf(-k2 / k)
    };
    match kind {
        ControllerKind::I => i_law,
        ControllerKind::Pi => match e1 {
            Some(e1) => h * s * e0.powf(-g.pi.0 / k) * e1.powf(g.pi.1 / k),
            None => i_law,
        },
        ControllerKind::Pid => match (e1, e2) {
            (Some(e1), Some(e2)) => {
                let (k1, k2, k3) = g.pid;
                h * s * e0.powf(-k1 / k) * e1.powf(k2 / k) * e2.powf(-k3 / k)
            }
            _ => i_law,
        },
        ControllerKind::ExplicitGustafsson => e1.map_or(i_law, explicit_gus),
        ControllerKind::ImplicitGustafsson => match (e1, st.h[1]) {
            (Some(e1), Some(h1)) => implicit_gus(e1, h1),
            _ => i_law,
        },
        ControllerKind::ImexGustafsson => match (e1, st.h[1]) {
            (Some(e1), Some(h1)) => {
                let a = explicit_gus(e1);
                let b = implicit_gus(e1, h1);
                if a.abs() <= b.abs() {
                    a
                } else {
                    b
                }
            }
            _ => i_law,
        },
    }
}

/// What happened to the attempt the proposal is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptOutcome {
    /// `failures_in_step`: rejected attempts before this one within the step.
    Accepted { failures_in_step: usize },
    /// `count`: consecutive error failures including this one.
    ErrorFailure { count: usize },
    InvalidEstimate { count: usize },
    /// `count`: solver or constraint failures within this step.
    SolverFailure { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicFailure {
    BelowMinimum,
    TooManyErrorFailures,
    TooManySolverFailures,
}

impl HeuristicFailure {
    pub fn into_error(self, t: f64, h: f64, params: &AdaptivityParams, count: usize) -> Error {
        match self {
            HeuristicFailure::BelowMinimum => Error::StepSizeUnderflow {
                t,
                h,
                h_min: params.h_min,
            },
            HeuristicFailure::TooManyErrorFailures => Error::TooManyErrorFailures { t, count },
            HeuristicFailure::TooManySolverFailures => Error::TooManyConvergenceFailures { t, count },
        }
    }
}

/// Clamps a raw proposal for the attempt of size `h` (signed). `st` is the
/// accepted history before this attempt.
pub fn apply_heuristics(
    h_raw: f64,
    h: f64,
    st: &ControllerState,
    params: &AdaptivityParams,
    outcome: AttemptOutcome,
) -> std::result::Result<f64, HeuristicFailure> {
    let raw_eta = if h_raw.is_finite() { (h_raw / h).abs() } else { 0.0 };
    let eta = match outcome {
        AttemptOutcome::Accepted { failures_in_step } => {
            let growth = if st.steps_taken == 0 {
                params.first_step_growth
            } else {
                params.max_growth
            };
            let growth = if failures_in_step > 0 { growth.min(1.0) } else { growth };
            raw_eta.min(growth)
        }
        AttemptOutcome::ErrorFailure { count } | AttemptOutcome::InvalidEstimate { count } => {
            if count >= params.max_error_failures {
                return Err(HeuristicFailure::TooManyErrorFailures);
            }
            if count >= params.failures_before_floor
                || matches!(outcome, AttemptOutcome::InvalidEstimate { .. })
            {
                params.min_reduction
            } else {
                raw_eta.clamp(params.min_reduction, params.error_fail_cap)
            }
        }
        AttemptOutcome::SolverFailure { count } => {
            if count >= params.max_solver_failures {
                return Err(HeuristicFailure::TooManySolverFailures);
            }
            params.solver_fail_factor
        }
    };
    let mag = (eta * h.abs()).min(params.h_max);
    if mag < params.h_min || mag == 0.0 {
        return Err(HeuristicFailure::BelowMinimum);
    }
    Ok(mag.copysign(h))
}

/// Starting step `0.01 ‖y0‖ / ‖f0‖` in the weighted norm, or `1e-6` when
/// either norm is below `1e-5`, limited by `|span|` and the bounds.
pub fn initial_step(y0: &[f64], f0: &[f64], w: &[f64], span: f64, params: &AdaptivityParams) -> f64 {
    let d0 = crate::numerics::wrms_unchecked(y0, w);
    let d1 = crate::numerics::wrms_unchecked(f0, w);
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h = h.min(span.abs()).min(params.h_max).max(params.h_min);
    h.copysign(span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_safety() -> AdaptivityParams {
        AdaptivityParams {
            safety: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn error_test_examples() {
        assert_eq!(error_test(0.99), TestOutcome::Accept);
        assert_eq!(error_test(1.0), TestOutcome::Accept);
        assert_eq!(error_test(1.01), TestOutcome::Reject);
        assert_eq!(error_test(f64::NAN), TestOutcome::Invalid);
        assert_eq!(error_test(f64::INFINITY), TestOutcome::Invalid);
    }

    #[test]
    fn bias_examples() {
        assert_eq!(bias_error(1.0, 1.5), 1.5);
        assert_eq!(bias_error(0.0, 1.5), 0.0);
        assert!((bias_error(0.2, 1.5) - 0.3).abs() < 1e-16);
    }

    #[test]
    fn i_controller_examples() {
        let p = unit_safety();
        let st = ControllerState::new().with_current(1.0, 1.0);
        assert_eq!(propose_step(ControllerKind::I, &st, &p, 2), 1.0);
        for order in 1..6 {
            let st = ControllerState::new().with_current(2f64.powi(order as i32 + 1), 1.0);
            let h = propose_step(ControllerKind::I, &st, &p, order);
            assert!((h - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn pi_with_equal_errors_gives_safety_times_h() {
        let p = AdaptivityParams::default();
        let mut st = ControllerState::new();
        st.commit(1.0, 0.7);
        let st = st.with_current(1.0, 0.7);
        let h = propose_step(ControllerKind::Pi, &st, &p, 3);
        assert!((h - 0.96 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn first_step_degrades_to_i() {
        let p = AdaptivityParams::default();
        let st = ControllerState::new().with_current(0.37, 0.01);
        let i = propose_step(ControllerKind::I, &st, &p, 2);
        for kind in ControllerKind::ALL {
            assert_eq!(propose_step(kind, &st, &p, 2), i, "{kind}");
        }
    }

    #[test]
    fn zero_error_is_floored() {
        let p = AdaptivityParams::default();
        let st = ControllerState::new().with_current(0.0, 1.0);
        let h = propose_step(ControllerKind::I, &st, &p, 1);
        assert!(h.is_finite());
        assert!((h - 0.96 * 1e5).abs() < 1e-6);
    }

    #[test]
    fn heuristic_examples() {
        let p = AdaptivityParams::default();
        let mut st = ControllerState::new();
        st.commit(0.5, 1.0);
        let acc = AttemptOutcome::Accepted { failures_in_step: 0 };
        assert_eq!(apply_heuristics(100.0, 1.0, &st, &p, acc), Ok(20.0));
        let fresh = ControllerState::new();
        assert_eq!(apply_heuristics(100.0, 1.0, &fresh, &p, acc), Ok(100.0));
        let fail = AttemptOutcome::ErrorFailure { count: 1 };
        assert_eq!(apply_heuristics(0.9, 1.0, &st, &p, fail), Ok(0.3));
        assert_eq!(apply_heuristics(0.001, 1.0, &st, &p, fail), Ok(0.1));
        let third = AttemptOutcome::ErrorFailure { count: 3 };
        assert_eq!(apply_heuristics(0.25, 1.0, &st, &p, third), Ok(0.1));
        let solver = AttemptOutcome::SolverFailure { count: 1 };
        assert_eq!(apply_heuristics(5.0, -2.0, &st, &p, solver), Ok(-0.5));
        let after_fail = AttemptOutcome::Accepted { failures_in_step: 1 };
        assert_eq!(apply_heuristics(3.0, 1.0, &st, &p, after_fail), Ok(1.0));
    }

    #[test]
    fn heuristic_failures() {
        let p = AdaptivityParams {
            h_min: 1e-3,
            ..Default::default()
        };
        let st = ControllerState::new();
        let acc = AttemptOutcome::Accepted { failures_in_step: 0 };
        assert_eq!(
            apply_heuristics(1e-4, 1e-2, &st, &p, acc),
            Err(HeuristicFailure::BelowMinimum)
        );
        assert_eq!(
            apply_heuristics(0.5, 1.0, &st, &p, AttemptOutcome::ErrorFailure { count: 7 }),
            Err(HeuristicFailure::TooManyErrorFailures)
        );
        assert_eq!(
            apply_heuristics(0.5, 1.0, &st, &p, AttemptOutcome::SolverFailure { count: 10 }),
            Err(HeuristicFailure::TooManySolverFailures)
        );
        assert_eq!(
            apply_heuristics(1.0, 1.0, &st, &p, AttemptOutcome::InvalidEstimate { count: 1 }),
            Ok(0.1)
        );
    }

    #[test]
    fn h_max_clamps() {
        let p = AdaptivityParams {
            h_max: 0.5,
            ..Default::default()
        };
        let st = ControllerState::new();
        let acc = AttemptOutcome::Accepted { failures_in_step: 0 };
        assert_eq!(apply_heuristics(3.0, -1.0, &st, &p, acc), Ok(-0.5));
    }

    #[test]
    fn params_validation() {
        assert!(AdaptivityParams::default().validate().is_ok());
        let p = AdaptivityParams {
            bias: 1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = AdaptivityParams {
            min_reduction: 0.5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn controller_names_parse() {
        for k in ControllerKind::ALL {
            assert_eq!(k.name().parse::<ControllerKind>().unwrap(), k);
        }
        assert!("bogus".parse::<ControllerKind>().is_err());
    }

    #[test]
    fn initial_step_policy() {
        let p = AdaptivityParams::default();
        let w = [1.0, 1.0];
        let h = initial_step(&[1.0, 1.0], &[10.0, 10.0], &w, 5.0, &p);
        assert!((h - 1e-3).abs() < 1e-18);
        assert_eq!(initial_step(&[0.0, 0.0], &[1.0, 1.0], &w, -5.0, &p), -1e-6);
        assert_eq!(initial_step(&[1.0, 1.0], &[1e-9, 0.0], &w, 1e-8, &p), 1e-8);
    }

    proptest! {
        #[test]
        fn proposals_nonincreasing_in_current_error(
            kind_idx in 0usize..6,
            e_lo in 1e-8f64..1e3,
            factor in 1.0f64..1e3,
            e1 in 1e-6f64..1e2,
            e2 in 1e-6f64..1e2,
            h1 in 1e-4f64..1.0,
            h2 in 1e-4f64..1.0,
            h in 1e-4f64..1.0,
            order in 1usize..6,
        ) {
            let kind = ControllerKind::ALL[kind_idx];
            let p = AdaptivityParams::default();
            let mut st = ControllerState::new();
            st.commit(e2, h2);
            st.commit(e1, h1);
            let lo = propose_step(kind, &st.with_current(e_lo, h), &p, order);
            let hi = propose_step(kind, &st.with_current(e_lo * factor, h), &p, order);
            prop_assert!(hi <= lo * (1.0 + 1e-12));
            prop_assert!(hi > 0.0);
        }

        #[test]
        fn missing_history_equals_i(kind_idx in 0usize..6, e in 1e-6f64..1e3, h in 1e-6f64..10.0) {
            let p = AdaptivityParams::default();
            let st = ControllerState::new().with_current(e, h);
            prop_assert_eq!(
                propose_step(ControllerKind::ALL[kind_idx], &st, &p, 3),
                propose_step(ControllerKind::I, &st, &p, 3)
            );
        }
    }
}
