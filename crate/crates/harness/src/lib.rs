//! Configuration-driven experiments for the sub-Nyquist joint DOA/frequency
//! toolkit: identifiability runs, Monte Carlo RMSE sweeps against the
//! Cramér-Rao bounds, bound-structure tables and front-end validation.
//!
//! Each experiment is a pair of functions: `run_*` returns typed results and
//! `*_report` turns them into CSV tables, SVG figures and threshold checks.

pub mod config;
mod error;
pub mod experiments;
pub mod metrics;
pub mod output;
pub mod plan;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::HarnessError;
pub use output::{Check, Manifest, Report, Table, Versions};
