//! File formats, plots and the command-line pipeline around `impactkit-core`.

pub mod config;
pub mod csvio;
pub mod error;
pub mod exec;
pub mod pipeline;
pub mod svg;
