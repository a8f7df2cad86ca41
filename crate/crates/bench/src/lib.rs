//! Brusselator advection-diffusion-reaction benchmarks: reference solutions,
//! explicit work-precision sweeps, implicit and ImEx predictor comparisons,
//! and multirate runs with interchangeable fast integrators.

pub mod experiments;
pub mod problem;
pub mod reference;
pub mod run;

pub use problem::{Brusselator, Term};
pub use run::{run, InnerKind, Preset, RunConfig, RunReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Solver(#[from] onestep::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("reference: {0}")]
    Reference(String),
    #[error("{0}")]
    Usage(String),
}

impl From<onestep::TableError> for HarnessError {
    fn from(e: onestep::TableError) -> Self {
        HarnessError::Solver(e.into())
    }
}
