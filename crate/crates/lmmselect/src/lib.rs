//! Sparse fixed-effects selection in linear mixed-effects models.
//!
//! The model is y = X beta + Z gamma + eps with grouped Gaussian random
//! effects gamma = Lambda_theta u. Selection works on a profiled
//! log-likelihood penalized by an iteratively reweighted ridge term
//! lambda * beta' W beta whose weights w_j = (beta_j^2 + delta^2)^-1 drive
//! the penalty toward a coefficient count, so the procedure approximates
//! best-subset (L0) selection while staying smooth. The regularization
//! parameter is chosen by BIC over a grid, with refits restricted to each
//! candidate active set.
//!
//! Modules, bottom-up:
//! - [`model`]: datasets, grouping, and the theta -> Lambda_theta templates.
//! - [`likelihood`]: conditional modes and (profiled) log-likelihoods.
//! - [`optimizer`]: box-constrained quasi-Newton minimization.
//! - [`adaptive_ridge`]: weight updates and the reweighted selection loop.
//! - [`selection`]: lambda grids, refits, BIC, and the regularization path.
//! - [`simulate`]: seeded longitudinal scenario generator with known truth.
//! - [`metrics`]: selection-quality criteria over Monte-Carlo replications.
//! - [`cli`]: file formats and the command implementations.

pub mod adaptive_ridge;
pub mod cli;
pub mod error;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod selection;
pub mod simulate;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result};
