//! Kernel-regularized identification of SISO predictor models and
//! stabilization of the forward models they imply.
//!
//! The pipeline: [`evidence::identify`] fits a one-step predictor `(f, g)`
//! under a TC kernel prior; if `A(z) = z^p (1 - F(z))` has a root outside the
//! unit disc the forward model `G/(1-F), 1/(1-F)` is unstable and one of the
//! stabilizers repairs it:
//!
//! - [`lmi::project_stable`]: closest stable `f` through an LMI/SDP,
//! - [`penalty::stabilize_ml_pf`]: barrier-penalized marginal likelihood,
//! - [`mcmc`]: full-Bayes sampling under a stability-truncated prior, giving
//!   a posterior-mean and a MAP forward model.
//!
//! [`harness`] reproduces the Monte Carlo comparison of all four.

pub mod error;
pub mod harness;
pub mod evidence;
pub mod kernel;
pub mod lmi;
pub mod lti;
pub mod mcmc;
pub mod optim;
pub mod par;
pub mod penalty;
pub mod poly;
pub mod seed;

pub use error::{Error, Result};
