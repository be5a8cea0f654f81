//! Experiment configs, single runs, the benchmark matrix and parameter sweeps.

mod config;
mod ledger;
mod matrix;
mod run;

pub use config::{custom_term, ExperimentConfig, GridConfig, LibraryConfig};
pub use ledger::{max_error, Ledger};
pub use matrix::{benchmark_matrix, sweep, write_ledger, DiffusionMode, MatrixAxes, SweepParam};
pub use run::{diffusion_mode, failed_result, output_root, run, RunOutput, OUTPUT_ENV};
