//! Batches of runs: the explicit work-precision sweep, the predictor grid
//! for the implicit and ImEx splittings, and the multirate inner comparison.
//! Runs inside a batch are independent and may execute in parallel.

use std::io::Write;

use onestep::adaptivity::ControllerKind;
use onestep::nonlinear::PredictorKind;
use onestep::par::{self, Execution};
use serde::{Deserialize, Serialize};

use crate::problem::Brusselator;
use crate::run::{run, InnerKind, Preset, RunConfig, RunReport};
use crate::HarnessError;

/// Explicit methods of orders 2 to 5.
pub const SWEEP_METHODS: [&str; 4] = ["heun_euler_2_1", "bogacki_shampine_3_2", "zonneveld_4_3", "cash_karp_5_4"];

pub const SWEEP_CONTROLLERS: [ControllerKind; 4] = [
    ControllerKind::Pid,
    ControllerKind::Pi,
    ControllerKind::I,
    ControllerKind::ExplicitGustafsson,
];

/// Loose, medium and tight `(rtol, atol)`.
pub const SWEEP_TOLERANCES: [(f64, f64); 3] = [(1e-4, 1e-9), (1e-5, 1e-10), (1e-6, 1e-11)];

pub const PREDICTOR_GRID_PRESETS: [Preset; 3] = [Preset::Dirk, Preset::Imex1, Preset::Imex2];

pub const PREDICTOR_GRID_PREDICTORS: [PredictorKind; 4] = [
    PredictorKind::Trivial,
    PredictorKind::MaxOrder,
    PredictorKind::VariableOrder,
    PredictorKind::Cutoff,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub controller: String,
    pub rtol: f64,
    pub atol: f64,
    /// All right-hand side evaluations, failed attempts included.
    pub rhs_evals: u64,
    pub error: f64,
    pub steps: u64,
    pub rejections: u64,
    pub wall_ms: f64,
}

impl SweepRow {
    fn failed(cfg: &RunConfig) -> Self {
        SweepRow {
            method: cfg.table_name().into(),
            controller: cfg.controller.name().into(),
            rtol: cfg.rtol,
            atol: cfg.atol,
            rhs_evals: 0,
            error: f64::NAN,
            steps: 0,
            rejections: 0,
            wall_ms: 0.0,
        }
    }

    pub fn is_failure(&self) -> bool {
        self.error.is_nan()
    }
}

pub fn sweep_configs() -> Vec<RunConfig> {
    let mut out = Vec::new();
    for method in SWEEP_METHODS {
        for controller in SWEEP_CONTROLLERS {
            for (rtol, atol) in SWEEP_TOLERANCES {
                let mut cfg = RunConfig::new(Preset::Erk);
                cfg.table = Some(method.into());
                cfg.controller = controller;
                cfg.rtol = rtol;
                cfg.atol = atol;
                out.push(cfg);
            }
        }
    }
    out
}

/// Runs every sweep configuration; failed runs become rows with a NaN error.
pub fn work_precision_sweep(problem: &Brusselator, reference: &[f64], exec: Execution) -> Vec<SweepRow> {
    par::map(exec, sweep_configs(), |cfg| match run(problem, &cfg, Some(reference)) {
        Ok(r) => SweepRow {
            method: r.method,
            controller: r.controller,
            rtol: r.rtol,
            atol: r.atol,
            rhs_evals: r.fe_evals + r.fi_evals,
            error: r.error.unwrap_or(f64::NAN),
            steps: r.steps,
            rejections: r.err_fails + r.solve_fails,
            wall_ms: r.wall_ms,
        },
        Err(e) => {
            log::warn!("sweep run {} / {} failed: {e}", cfg.table_name(), cfg.controller);
            SweepRow::failed(&cfg)
        }
    })
}

pub fn predictor_grid_configs() -> Vec<RunConfig> {
    let mut out = Vec::new();
    for preset in PREDICTOR_GRID_PRESETS {
        for predictor in PREDICTOR_GRID_PREDICTORS {
            let mut cfg = RunConfig::new(preset);
            cfg.predictor = predictor;
            out.push(cfg);
        }
    }
    out
}

/// Implicit and ImEx runs over all predictors, in preset-major order.
pub fn predictor_grid(problem: &Brusselator, reference: &[f64], exec: Execution) -> Vec<Result<RunReport, HarnessError>> {
    par::map(exec, predictor_grid_configs(), |cfg| run(problem, &cfg, Some(reference)))
}

/// Multirate runs, one per inner integrator.
pub fn multirate_inners(problem: &Brusselator, reference: &[f64], exec: Execution) -> Vec<Result<RunReport, HarnessError>> {
    let configs: Vec<RunConfig> = InnerKind::ALL
        .into_iter()
        .map(|inner| {
            let mut cfg = RunConfig::new(Preset::Mri);
            cfg.inner = inner;
            cfg
        })
        .collect();
    par::map(exec, configs, |cfg| run(problem, &cfg, Some(reference)))
}

pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
