use std::fs::File;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use onestep::adaptivity::ControllerKind;
use onestep::par::Execution;
use onestep_bench::experiments::{self, write_csv};
use onestep_bench::reference::{compute_reference, compute_reference_with, Reference, REFERENCE_ATOL, REFERENCE_RTOL};
use onestep_bench::run::{parse_predictor, run, InnerKind, Preset, RunConfig};
use onestep_bench::{Brusselator, HarnessError};

#[derive(Parser)]
#[command(name = "bench", about = "Brusselator advection-diffusion-reaction benchmarks")]
struct Cli {
    /// Run batches on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Grid points.
    #[arg(long, default_value_t = 512)]
    points: usize,
    /// Diffusion coefficient; the preset's default when omitted.
    #[arg(long)]
    diffusion: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    tf: f64,
    /// Diffuse all species with the `u` profile.
    #[arg(long = "shared-diffusion-profile")]
    shared_profile: bool,
    /// Reference file; computed on the fly when omitted.
    #[arg(long)]
    reference: Option<PathBuf>,
}

impl ProblemArgs {
    fn problem(&self, default_diffusion: f64) -> Result<Brusselator, HarnessError> {
        if self.points < 3 {
            return Err(HarnessError::Usage("need at least 3 grid points".into()));
        }
        let mut p = Brusselator::default()
            .with_points(self.points)
            .with_diffusion(self.diffusion.unwrap_or(default_diffusion));
        p.tf = self.tf;
        p.shared_diffusion_profile = self.shared_profile;
        Ok(p)
    }

    fn reference(&self, p: &Brusselator) -> Result<Vec<f64>, HarnessError> {
        match &self.reference {
            Some(path) => {
                let r = Reference::read(path)?;
                if !r.matches(p) {
                    return Err(HarnessError::Reference(format!("{} does not match the problem", path.display())));
                }
                Ok(r.values)
            }
            None => {
                log::info!("computing reference solution");
                Ok(compute_reference(p)?.values)
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// One run with a chosen preset.
    Brusselator {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_enum, default_value_t = Preset::Dirk)]
        preset: Preset,
        /// Table, ARK pair or MRI coupling name.
        #[arg(long)]
        table: Option<String>,
        #[arg(long, default_value = "pid", value_parser = parse_controller)]
        controller: ControllerKind,
        #[arg(long, default_value_t = 1e-4)]
        rtol: f64,
        #[arg(long, default_value_t = 1e-9)]
        atol: f64,
        /// trivial, max-order, variable-order or cutoff.
        #[arg(long, default_value = "trivial")]
        predictor: String,
        #[arg(long, value_enum, default_value_t = InnerKind::Erk)]
        inner: InnerKind,
        #[arg(long, default_value_t = 1e-4)]
        inner_rtol: f64,
        #[arg(long, default_value_t = 1e-9)]
        inner_atol: f64,
        /// Skip the error against a reference.
        #[arg(long)]
        no_error: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Explicit methods x controllers x tolerances.
    Sweep {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Implicit and ImEx splittings x predictors.
    Predictors {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Multirate runs with each inner integrator.
    Multirate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Writes a reference solution file.
    Reference {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = REFERENCE_RTOL)]
        rtol: f64,
        #[arg(long, default_value_t = REFERENCE_ATOL)]
        atol: f64,
    },
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    s.parse().map_err(|e: onestep::Error| e.to_string())
}

fn emit<T: serde::Serialize>(rows: &[T], csv: &Option<PathBuf>) -> Result<(), HarnessError> {
    match csv {
        Some(path) => write_csv(rows, File::create(path)?),
        None => write_csv(rows, io::stdout().lock()),
    }
}

fn collect(rows: Vec<Result<onestep_bench::RunReport, HarnessError>>) -> Vec<onestep_bench::RunReport> {
    rows.into_iter()
        .filter_map(|r| r.map_err(|e| log::error!("run failed: {e}")).ok())
        .collect()
}

fn main_inner(cli: Cli) -> Result<(), HarnessError> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Brusselator {
            problem,
            preset,
            table,
            controller,
            rtol,
            atol,
            predictor,
            inner,
            inner_rtol,
            inner_atol,
            no_error,
            csv,
        } => {
            let p = problem.problem(preset.diffusion())?;
            let reference = if no_error { None } else { Some(problem.reference(&p)?) };
            let cfg = RunConfig {
                preset,
                table,
                controller,
                rtol,
                atol,
                predictor: parse_predictor(&predictor)?,
                inner,
                inner_rtol,
                inner_atol,
                ..RunConfig::new(preset)
            };
            let report = run(&p, &cfg, reference.as_deref())?;
            emit(&[report], &csv)
        }
        Command::Sweep { problem, csv } => {
            let p = problem.problem(0.0)?;
            let reference = problem.reference(&p)?;
            emit(&experiments::work_precision_sweep(&p, &reference, exec), &csv)
        }
        Command::Predictors { problem, csv } => {
            let p = problem.problem(0.01)?;
            let reference = problem.reference(&p)?;
            emit(&collect(experiments::predictor_grid(&p, &reference, exec)), &csv)
        }
        Command::Multirate { problem, csv } => {
            let p = problem.problem(0.01)?;
            let reference = problem.reference(&p)?;
            emit(&collect(experiments::multirate_inners(&p, &reference, exec)), &csv)
        }
        Command::Reference { problem, out, rtol, atol } => {
            let p = problem.problem(0.01)?;
            compute_reference_with(&p, rtol, atol)?.write(&out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
