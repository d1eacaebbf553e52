//! Deterministic approximate Bayesian inference for latent Gaussian models
//! with integrated nested Laplace approximations, plus Metropolis–Hastings
//! over conditioning parameters on top of the conditional fits.

pub mod error;
pub mod fit;
pub mod gaussian_approx;
pub mod gmrf;
pub mod hyper_posterior;
pub mod integration;
pub mod latent_marginals;
pub mod likelihood;
pub mod marginal;
pub mod mcmc_hybrid;
pub mod model;
pub mod optim;
pub mod prediction;
pub mod spline;

pub use error::{Error, ErrorKind, Result};
