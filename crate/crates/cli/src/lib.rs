//! Batch front end for MVPLN mixture clustering: fits a range of `G` in
//! parallel, runs replicated simulation studies, reports chain diagnostics
//! and draws per-cluster heatmaps.

pub mod config;
pub mod diagnose;
pub mod error;
pub mod heatmap;
pub mod manifest;
pub mod run;
pub mod sim;

pub use config::{Norm, RunConfig};
pub use error::CliError;
