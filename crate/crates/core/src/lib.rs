//! Counterfactual estimation for a single treated unit in a country-year panel.
//!
//! The crate is `no_std` and only needs an allocator. It covers:
//!
//! * [`panel`]: the immutable unit × variable × year panel, predictor and donor
//!   pool specifications, and the predictor/outcome matrices fed to the solvers.
//! * [`simplex`] and [`scm`]: the nested synthetic-control problem (donor weights
//!   on the simplex, predictor weights chosen to minimise pre-period MSPE).
//! * [`robustness`]: in-time and in-space placebos, RMSPE ratios, permutation
//!   p-values, leave-one-out and train/validation selection of predictor weights.
//! * [`trend`]: Hodrick–Prescott filtering and internal/external shortfall
//!   decomposition against a potential-output path.
//! * [`bsts`]: a structural time-series model with spike-and-slab regression on
//!   control series, fitted by Gibbs sampling with forward-filter backward-sample.
//! * [`oracle`]: seeded factor-model panels and brute-force reference solvers.
//!
//! IO, configuration and plotting live in the `impactkit` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bsts;
pub mod error;
pub mod exec;
pub mod linalg;
pub(crate) mod math;
pub mod optim;
pub mod oracle;
pub mod panel;
pub mod robustness;
pub mod scm;
pub mod simplex;
pub mod stats;
pub mod trend;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use panel::{Panel, PanelBuilder, YearRange, YearSeries};
pub use scm::{ScmFit, ScmProblem, SolverOptions};
