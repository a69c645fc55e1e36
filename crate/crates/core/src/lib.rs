//! Curvature-matrix laboratory for exponential-family generalized linear
//! models.
//!
//! The crate computes the curvature matrices that appear in preconditioned
//! optimization of GLM losses — the Fisher information matrix, the empirical
//! Fisher, generalized Gauss-Newton matrices under explicit splits, the exact
//! Hessian, Monte Carlo Fisher estimates, and variance-adaptation matrices —
//! and provides a damped preconditioned gradient-descent loop, diagnostics
//! that quantify the discrepancies between the matrices, dataset ingestion
//! (LIBSVM, CSV, synthetic generators), and a declarative experiment runner.
//!
//! A note on terminology, since it differs across communities: here *Fisher*
//! means the expectation of the log-likelihood gradient outer product taken
//! under the model's own predictive distribution at the training inputs,
//! while *empirical Fisher* means the outer-product sum of the per-sample
//! loss gradients evaluated at the observed training labels. The empirical
//! Fisher is not a Monte Carlo estimate of the Fisher; the unbiased one-draw
//! estimate that resamples labels from the model is [`curvature::mc_fisher`].
//!
//! All losses, gradients, and curvature matrices use the `1/N` averaging
//! convention. Sum-convention quantities are recovered by multiplying by `N`.

pub mod check;
pub mod curvature;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod model;
pub mod optim;
pub mod reduce;

pub use error::{Error, Result};
