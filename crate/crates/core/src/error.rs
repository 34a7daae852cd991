use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("series did not converge within {terms} terms")]
    SeriesNonConvergence { terms: usize },

    #[error("observation on day {day} has zero likelihood under the current state distribution")]
    DegenerateLikelihood { day: usize },

    #[error("horizon of {k_max} days captures only {mass} of the onset distribution")]
    HorizonTooShort { k_max: usize, mass: f64 },

    #[error("optimizer did not converge after {restarts} restarts ({evaluations} evaluations)")]
    NonConvergence { restarts: usize, evaluations: usize },

    #[error("fit implies an expected cycle length of {cycle_length:.1} days, outside [10, 120]")]
    DegenerateFit { cycle_length: f64 },

    #[error("Hessian of the negative log-likelihood is singular")]
    SingularHessian,

    #[error("need more than {needed} complete cycles, found {found}")]
    InsufficientCycles { needed: usize, found: usize },

    #[error("per-day joint densities were not retained by the filter run")]
    NotRetained,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: date {date} does not follow the previous row's date")]
    NonConsecutiveDates { line: usize, date: String },

    #[error("line {line}: menses flag must be 0 or 1, got {value:?}")]
    BadMensesFlag { line: usize, value: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 1 for numerical failures, 2 for input validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SeriesNonConvergence { .. }
            | Error::DegenerateLikelihood { .. }
            | Error::HorizonTooShort { .. }
            | Error::NonConvergence { .. }
            | Error::DegenerateFit { .. }
            | Error::SingularHessian => 1,
            _ => 2,
        }
    }

    /// Short machine-readable kind used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InvalidInput(_) => "invalid_input",
            Error::SeriesNonConvergence { .. } => "series_non_convergence",
            Error::DegenerateLikelihood { .. } => "degenerate_likelihood",
            Error::HorizonTooShort { .. } => "horizon_too_short",
            Error::NonConvergence { .. } => "non_convergence",
            Error::DegenerateFit { .. } => "degenerate_fit",
            Error::SingularHessian => "singular_hessian",
            Error::InsufficientCycles { .. } => "insufficient_cycles",
            Error::NotRetained => "not_retained",
            Error::Parse { .. } => "parse",
            Error::NonConsecutiveDates { .. } => "non_consecutive_dates",
            Error::BadMensesFlag { .. } => "bad_menses_flag",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
