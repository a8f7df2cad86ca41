//! Single benchmark runs: preset splittings, stepper construction and the
//! statistics row each run produces.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use onestep::adaptivity::{AdaptivityParams, ControllerKind};
use onestep::ark::ArkStepper;
use onestep::erk::ErkStepper;
use onestep::integrator::{EvolveMode, EvolveStatus, Integrator};
use onestep::mri::{DirkLoopInner, InnerStepper, IntegratorInner, MriStepper};
use onestep::nonlinear::PredictorKind;
use onestep::numerics::Tolerances;
use onestep::stepper::Stepper;
use onestep::tables::catalog;
use serde::{Deserialize, Serialize};

use crate::problem::{Brusselator, Term};
use crate::HarnessError;

/// Slow step of the multirate preset.
pub const MRI_SLOW_STEP: f64 = 0.1;

const MAX_STEPS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
pub enum Preset {
    /// Everything explicit, no diffusion.
    Erk,
    /// Everything implicit.
    Dirk,
    /// Advection explicit; diffusion and reaction implicit.
    Imex1,
    /// Advection and reaction explicit; diffusion implicit, linearly implicit solves.
    Imex2,
    /// Advection slow explicit, diffusion slow implicit, reaction fast.
    Mri,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Erk, Preset::Dirk, Preset::Imex1, Preset::Imex2, Preset::Mri];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Erk => "erk",
            Preset::Dirk => "dirk",
            Preset::Imex1 => "imex1",
            Preset::Imex2 => "imex2",
            Preset::Mri => "mri",
        }
    }

    pub fn split(self) -> Split {
        use Term::*;
        let (explicit, implicit, fast) = match self {
            Preset::Erk => (vec![Advection, Diffusion, Reaction], vec![], vec![]),
            Preset::Dirk => (vec![], vec![Advection, Diffusion, Reaction], vec![]),
            Preset::Imex1 => (vec![Advection], vec![Diffusion, Reaction], vec![]),
            Preset::Imex2 => (vec![Advection, Reaction], vec![Diffusion], vec![]),
            Preset::Mri => (vec![Advection], vec![Diffusion], vec![Reaction]),
        };
        Split { explicit, implicit, fast }
    }

    /// Diffusion coefficient the preset is meant for.
    pub fn diffusion(self) -> f64 {
        match self {
            Preset::Erk => 0.0,
            _ => 0.01,
        }
    }

    pub fn default_table(self) -> &'static str {
        match self {
            Preset::Erk => "cash_karp_5_4",
            Preset::Dirk => "ark436l2sa_dirk_4_3",
            Preset::Imex1 | Preset::Imex2 => "ark436l2sa",
            Preset::Mri => "imex_mri_gark_trapezoidal_x3",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Assignment of each term to a partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub explicit: Vec<Term>,
    pub implicit: Vec<Term>,
    pub fast: Vec<Term>,
}

impl Split {
    /// Every term must appear exactly once.
    pub fn validate(&self) -> Result<(), HarnessError> {
        for term in Term::ALL {
            let count = self
                .explicit
                .iter()
                .chain(&self.implicit)
                .chain(&self.fast)
                .filter(|t| **t == term)
                .count();
            if count != 1 {
                return Err(HarnessError::Usage(format!("term {term:?} assigned {count} times")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
pub enum InnerKind {
    /// Adaptive third-order explicit method.
    Erk,
    /// Adaptive third-order DIRK under the library integrator.
    Dirk,
    /// Adaptive third-order DIRK under a standalone step loop.
    Custom,
}

impl InnerKind {
    pub const ALL: [InnerKind; 3] = [InnerKind::Erk, InnerKind::Dirk, InnerKind::Custom];

    pub fn name(self) -> &'static str {
        match self {
            InnerKind::Erk => "erk",
            InnerKind::Dirk => "dirk",
            InnerKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    /// Table, pair or coupling name; the preset default when `None`.
    pub table: Option<String>,
    pub controller: ControllerKind,
    pub rtol: f64,
    pub atol: f64,
    pub predictor: PredictorKind,
    pub inner: InnerKind,
    pub inner_rtol: f64,
    pub inner_atol: f64,
    pub slow_step: f64,
}

impl RunConfig {
    pub fn new(preset: Preset) -> Self {
        RunConfig {
            preset,
            table: None,
            controller: ControllerKind::Pid,
            rtol: 1e-4,
            atol: 1e-9,
            predictor: PredictorKind::Trivial,
            inner: InnerKind::Erk,
            inner_rtol: 1e-4,
            inner_atol: 1e-9,
            slow_step: MRI_SLOW_STEP,
        }
    }

    pub fn table_name(&self) -> &str {
        self.table.as_deref().unwrap_or(self.preset.default_table())
    }
}

/// Statistics of one run, one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub preset: String,
    pub method: String,
    pub controller: String,
    pub predictor: String,
    pub inner: String,
    pub rtol: f64,
    pub atol: f64,
    pub steps: u64,
    pub err_fails: u64,
    pub solve_fails: u64,
    pub fe_evals: u64,
    pub fi_evals: u64,
    pub nls_iters: u64,
    pub nls_fails: u64,
    pub ls_setups: u64,
    pub j_evals: u64,
    pub fast_steps: Option<u64>,
    pub fast_fails: Option<u64>,
    pub fast_rhs_evals: Option<u64>,
    pub fast_nls_iters: Option<u64>,
    pub fast_nls_fails: Option<u64>,
    pub fast_ls_setups: Option<u64>,
    pub fast_j_evals: Option<u64>,
    /// Max componentwise relative error at the final time.
    pub error: Option<f64>,
    pub wall_ms: f64,
}

fn predictor_name(p: PredictorKind) -> &'static str {
    match p {
        PredictorKind::Trivial => "trivial",
        PredictorKind::MaxOrder => "max-order",
        PredictorKind::VariableOrder => "variable-order",
        PredictorKind::Cutoff => "cutoff",
    }
}

/// Max over components of `|y − ref| / |ref|`.
pub fn max_relative_error(y: &[f64], reference: &[f64]) -> f64 {
    y.iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / r.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn build_inner(problem: &Arc<Brusselator>, cfg: &RunConfig, split: &Split) -> Result<Box<dyn InnerStepper>, HarnessError> {
    let n = problem.dim();
    let tol = Tolerances::new(cfg.inner_rtol, cfg.inner_atol)?;
    let fast = problem.rhs(&split.fast);
    let dirk = || -> Result<ArkStepper, HarnessError> {
        Ok(ArkStepper::dirk(catalog::butcher("ark324l2sa_dirk_3_2")?, problem.rhs(&split.fast), n)?
            .with_jacobian_structure(problem.reaction_structure()))
    };
    let zero = vec![0.0; n];
    Ok(match cfg.inner {
        InnerKind::Erk => {
            let st = ErkStepper::new(catalog::butcher("bogacki_shampine_3_2")?, fast, n)?;
            let mut integ = Integrator::adaptive(Box::new(st), problem.t0, &zero, tol)?;
            integ.set_max_steps(MAX_STEPS);
            Box::new(IntegratorInner::new(integ))
        }
        InnerKind::Dirk => {
            let mut integ = Integrator::adaptive(Box::new(dirk()?), problem.t0, &zero, tol)?;
            integ.set_max_steps(MAX_STEPS);
            Box::new(IntegratorInner::new(integ))
        }
        InnerKind::Custom => Box::new(DirkLoopInner::new(Box::new(dirk()?), tol)?),
    })
}

fn build(problem: &Arc<Brusselator>, cfg: &RunConfig) -> Result<Integrator, HarnessError> {
    let split = cfg.preset.split();
    split.validate()?;
    let n = problem.dim();
    let y0 = problem.initial_state();
    let tol = Tolerances::new(cfg.rtol, cfg.atol)?;
    let name = cfg.table_name();
    let implicit = |st: ArkStepper| {
        st.with_jacobian_structure(problem.jacobian_structure())
            .with_predictor(cfg.predictor)
    };
    let stepper: Box<dyn Stepper> = match cfg.preset {
        Preset::Erk => Box::new(ErkStepper::new(catalog::butcher(name)?, problem.rhs(&split.explicit), n)?),
        Preset::Dirk => Box::new(implicit(ArkStepper::dirk(catalog::butcher(name)?, problem.rhs(&split.implicit), n)?)),
        Preset::Imex1 | Preset::Imex2 => {
            let st = ArkStepper::imex(
                catalog::ark_pair(name)?,
                problem.rhs(&split.explicit),
                problem.rhs(&split.implicit),
                n,
            )?;
            Box::new(implicit(st).linearly_implicit(cfg.preset == Preset::Imex2))
        }
        Preset::Mri => {
            let inner = build_inner(problem, cfg, &split)?;
            let st = MriStepper::new(
                catalog::coupling(name)?,
                Some(problem.rhs(&split.explicit)),
                Some(problem.rhs(&split.implicit)),
                inner,
                n,
            )?
            .linearly_implicit(true)
            .with_jacobian_structure(problem.jacobian_structure());
            let mut integ = Integrator::fixed(Box::new(st), problem.t0, &y0, cfg.slow_step, tol)?;
            integ.set_max_steps(MAX_STEPS);
            return Ok(integ);
        }
    };
    let mut integ = Integrator::adaptive(stepper, problem.t0, &y0, tol)?;
    integ.set_params(AdaptivityParams {
        controller: cfg.controller,
        ..AdaptivityParams::default()
    })?;
    integ.set_max_steps(MAX_STEPS);
    Ok(integ)
}

/// Integrates to the final time and returns the solution with the statistics.
pub fn run_with_solution(
    problem: &Brusselator,
    cfg: &RunConfig,
    reference: Option<&[f64]>,
) -> Result<(RunReport, Vec<f64>), HarnessError> {
    let problem = Arc::new(problem.clone());
    let start = Instant::now();
    let mut integ = build(&problem, cfg)?;
    let mut y = vec![0.0; problem.dim()];
    loop {
        let (_, status) = integ.evolve(problem.tf, EvolveMode::NormalTstop, &mut y)?;
        if status == EvolveStatus::TstopReached {
            break;
        }
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    if let Some(r) = reference {
        if r.len() != y.len() {
            return Err(HarnessError::Reference(format!(
                "reference has {} values, run has {}",
                r.len(),
                y.len()
            )));
        }
    }
    let s = integ.stats();
    let st = integ.stepper_stats();
    let fast = integ.stepper().fast_stats();
    let report = RunReport {
        preset: cfg.preset.name().into(),
        method: cfg.table_name().into(),
        controller: cfg.controller.name().into(),
        predictor: predictor_name(cfg.predictor).into(),
        inner: if cfg.preset == Preset::Mri { cfg.inner.name().into() } else { String::new() },
        rtol: cfg.rtol,
        atol: cfg.atol,
        steps: s.steps,
        err_fails: s.error_fails,
        solve_fails: s.solver_fails,
        fe_evals: st.fe_evals,
        fi_evals: st.fi_evals,
        nls_iters: st.solver.nls_iters,
        nls_fails: st.solver.nls_fails,
        ls_setups: st.solver.lin_setups,
        j_evals: st.solver.jac_evals,
        fast_steps: fast.map(|f| f.steps),
        fast_fails: fast.map(|f| f.error_fails + f.solver_fails),
        fast_rhs_evals: fast.map(|f| f.rhs_evals),
        fast_nls_iters: fast.map(|f| f.nls_iters),
        fast_nls_fails: fast.map(|f| f.nls_fails),
        fast_ls_setups: fast.map(|f| f.lin_setups),
        fast_j_evals: fast.map(|f| f.jac_evals),
        error: reference.map(|r| max_relative_error(&y, r)),
        wall_ms,
    };
    Ok((report, y))
}

pub fn run(problem: &Brusselator, cfg: &RunConfig, reference: Option<&[f64]>) -> Result<RunReport, HarnessError> {
    run_with_solution(problem, cfg, reference).map(|(r, _)| r)
}

/// Parses a predictor name as accepted on the command line.
pub fn parse_predictor(s: &str) -> Result<PredictorKind, HarnessError> {
    PredictorKind::from_str(s).map_err(|e| HarnessError::Usage(e.to_string()))
}
