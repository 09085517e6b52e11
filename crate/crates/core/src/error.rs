use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("spectral decomposition failed to converge")]
    ConvergenceFailure,

    #[error("GCV denominator 1 - tr(H)/n = {0:e} is degenerate (near interpolation)")]
    DenominatorDegenerate(f64),

    #[error("true risk has no closed form for a nonlinear response model")]
    ModelMismatch,

    #[error(
        "shortcut coefficient magnitude {0:e} overflowed; the step schedule is likely divergent"
    )]
    PowerOverflow(f64),

    #[error("shortcut coefficient storage needs {needed} entries, budget is {budget}")]
    MemoryBudget { needed: usize, budget: usize },

    #[error("linear system is singular")]
    SingularSystem,

    #[error("quadrature did not reach tolerance {tolerance:e} (error estimate {estimate:e} after {evaluations} evaluations)")]
    QuadratureFailure {
        tolerance: f64,
        estimate: f64,
        evaluations: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
