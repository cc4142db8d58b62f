use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

use crate::scm::ScmFit;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone)]
pub enum Error {
    /// Input violates a documented precondition or invariant.
    Validation(String),
    UnknownUnit(String),
    UnknownVariable(String),
    MissingSeries { unit: String, variable: String },
    ZeroVariance { variable: String },
    NonPositive { unit: String, variable: String, year: i32 },
    InvalidWindow(String),
    Shape(String),
    NonFinite(String),
    TooFewDonors { required: usize, available: usize },
    TooFewPlacebos { required: usize, available: usize },
    /// Every outer-search restart hit its evaluation budget; carries the best incumbent.
    NonConvergence { best: Box<ScmFit> },
    /// The MCMC likelihood became non-finite.
    Likelihood { iteration: usize },
    Degenerate(String),
}

impl Error {
    /// Numerical failures (as opposed to invalid input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Likelihood { .. }
                | Error::Degenerate(_)
                | Error::ZeroVariance { .. }
                | Error::NonFinite(_)
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Validation(m) => write!(f, "validation error: {m}"),
            Error::UnknownUnit(u) => write!(f, "unknown unit `{u}`"),
            Error::UnknownVariable(v) => write!(f, "unknown variable `{v}`"),
            Error::MissingSeries { unit, variable } => {
                write!(f, "unit `{unit}` has no complete `{variable}` series over the requested years")
            }
            Error::ZeroVariance { variable } => {
                write!(f, "predictor `{variable}` has zero variance across units; cannot standardize")
            }
            Error::NonPositive { unit, variable, year } => {
                write!(f, "`{variable}` for `{unit}` is not positive in {year}; growth undefined")
            }
            Error::InvalidWindow(m) => write!(f, "invalid window: {m}"),
            Error::Shape(m) => write!(f, "shape mismatch: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite input: {m}"),
            Error::TooFewDonors { required, available } => {
                write!(f, "donor pool has {available} units, at least {required} required")
            }
            Error::TooFewPlacebos { required, available } => {
                write!(f, "{available} placebo fits survive the pre-fit filter, at least {required} required")
            }
            Error::NonConvergence { best } => write!(
                f,
                "outer search did not converge after all restarts (best pre-RMSPE {:.6})",
                best.pre_rmspe
            ),
            Error::Likelihood { iteration } => {
                write!(f, "non-finite likelihood at MCMC iteration {iteration}")
            }
            Error::Degenerate(m) => write!(f, "degenerate problem: {m}"),
        }
    }
}

impl core::error::Error for Error {}
