//! Monte Carlo comparison of the stabilizers on random lightly damped
//! second-order ARMAX systems.
//!
//! Each run derives its own seed from the master seed, draws a model and an
//! identification set, fits the empirical-Bayes predictor, and, when the
//! implied forward model is unstable, applies every configured stabilizer
//! and scores it with the relative impulse-response error. Runs are
//! independent and may execute concurrently; the report is assembled in run
//! order and is a pure function of the configuration.

pub mod config;
pub mod generator;
pub mod io;
pub mod metrics;
pub mod report;
pub mod run;

pub use config::{resolve_output_dir, BenchmarkConfig, Method, OUT_DIR_ENV};
pub use generator::{generate_armax_model, generate_dataset};
pub use metrics::relative_error;
pub use report::{Report, RunRecord, Summary};
pub use run::{apply_stabilizers, run_monte_carlo, run_single};
