use thiserror::Error;

/// Structural problems found while building or loading a coefficient table.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("{what} has length {found}, expected {expected}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("explicit table must be strictly lower triangular: A[{row}][{col}] = {value}")]
    NotStrictlyLower { row: usize, col: usize, value: f64 },
    #[error("implicit table must be lower triangular: A[{row}][{col}] = {value}")]
    NotLowerTriangular { row: usize, col: usize, value: f64 },
    #[error("table has no stages")]
    Empty,
    #[error("abscissae must be sorted (nondecreasing): c[{index}] = {value} < c[{prev}]")]
    UnsortedAbscissae { index: usize, prev: usize, value: f64 },
    #[error("coupling abscissae must start at 0 and end at 1")]
    AbscissaeEndpoints,
    #[error("coupling is not solve-decoupled: {0}")]
    NotSolveDecoupled(String),
    #[error("coupling polynomial degree {0} exceeds the supported maximum of 2")]
    DegreeTooHigh(usize),
    #[error("explicit and implicit tables must share the stage count ({explicit} vs {implicit})")]
    StageCountMismatch { explicit: usize, implicit: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown table name `{0}`")]
    UnknownName(String),
    #[error("cannot read coefficient file: {0}")]
    Io(String),
}

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("vector length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("illegal weight: rtol*|y| + atol is zero in component {index}")]
    IllegalWeight { index: usize },
    #[error("invalid tolerances: {0}")]
    InvalidTolerances(String),
    #[error("matrix is singular (zero pivot in column {column})")]
    SingularMatrix { column: usize },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("right-hand side returned a non-finite value at t = {t}")]
    NonFiniteRhs { t: f64 },
    #[error("nonlinear solver did not converge ({0})")]
    Convergence(ConvergenceFailure),
    #[error("step size {h:e} is below the minimum {h_min:e} at t = {t}")]
    StepSizeUnderflow { t: f64, h: f64, h_min: f64 },
    #[error("{count} error test failures in one step at t = {t}")]
    TooManyErrorFailures { t: f64, count: usize },
    #[error("{count} solver or constraint failures in one step at t = {t}")]
    TooManyConvergenceFailures { t: f64, count: usize },
    #[error("maximum number of internal steps ({0}) reached before tout")]
    TooMuchWork(u64),
    #[error("root function returned a non-finite value at t = {t}")]
    NonFiniteRoot { t: f64 },
    #[error("initial condition violates the constraint on component {index}")]
    ConstraintAtStart { index: usize },
    #[error("inner stepper failed: {0}")]
    Inner(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Usage(String),
}

/// Why a nonlinear iteration stopped without converging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceFailure {
    Diverged,
    MaxIterations,
    LinearSolve,
}

impl std::fmt::Display for ConvergenceFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConvergenceFailure::Diverged => write!(f, "iteration diverged"),
            ConvergenceFailure::MaxIterations => write!(f, "maximum iterations reached"),
            ConvergenceFailure::LinearSolve => write!(f, "linear solve failed"),
        }
    }
}

impl Error {
    /// Failures after which the step loop may retry with a smaller step.
    pub fn is_recoverable(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteRhs { .. } | Error::Convergence(_) | Error::SingularMatrix { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
