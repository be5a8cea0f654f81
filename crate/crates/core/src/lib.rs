//! Sparse identification of drift and diffusion for stochastic delay
//! differential equations `dX = f(X, X_tau) dt + g(X, X_tau) dW`.
//!
//! Trajectories are turned into pointwise drift and covariance estimates
//! (KM, FD, CD, TR), optionally pooled across an ensemble (approaches A, B1,
//! B2), and regressed onto a candidate library over the delay-augmented state
//! `Z = (X(t), X(t - tau))` with sequentially thresholded least squares.

pub mod data;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod library;
pub mod metrics;
pub mod models;
pub mod neighbors;
pub mod regression;
pub mod approaches;
pub mod simulate;

pub use data::{augment, split, AugmentedSample, History, SplitSpec, TimeGrid, Trajectory, TrajectoryMeta};
pub use error::{Error, Result};
pub use approaches::{approach_a, approach_b1, approach_b2, identify_from, Approach, ApproachA, B1Estimator, B1Output, B2Output, EstimateSource, Pathwise, QueryMode};
pub use estimators::{cov_estimate, drift_estimate, pathwise_estimates, EstimateSet, EstimatorMethod};
pub use experiment::{benchmark_matrix, run, sweep, DiffusionMode, ExperimentConfig, Ledger, MatrixAxes, SweepParam};
pub use library::{evaluate_library, polynomial_library, with_custom_terms, BasisLibrary, BasisTerm, CustomTerm, Placement};
pub use metrics::{coefficient_errors, rmse_drift_diffusion, rmse_state, support_check, BenchmarkResult, ErrorMap, SupportCheck};
pub use models::{BenchmarkModel, CoefficientMap, ModelSpec, TrueCoefficients};
pub use neighbors::{build_index, NeighborIndex};
pub use regression::{assemble_problem, fit, least_squares, stls, FitOptions, SparseFit, StlsOptions, StlsResult, StlsStatus};
pub use simulate::{em_step, simulate, simulate_ensemble, wiener_increments, NoisePlan};
