//! Model-based clustering of three-way count data with finite mixtures of
//! matrix variate Poisson-log normal (MVPLN) distributions.
//!
//! Each unit is an `r × p` matrix of counts (occasions × variables). Counts
//! are conditionally Poisson with log-means `θ + log s`, and the latent
//! matrix `θ` follows a matrix normal distribution with mean `M`, row
//! covariance `Φ` and column covariance `Ω`, so that `vec(θ)` has covariance
//! `Φ ⊗ Ω` under the row-major vectorization used throughout the crate.
//!
//! Parameters are estimated with a Monte Carlo EM algorithm: latent matrices
//! are sampled with Hamiltonian Monte Carlo, chain quality is checked with
//! the potential scale reduction factor and effective sample size, and the
//! outer loop stops once the log-likelihood trace passes a
//! Heidelberger–Welch stationarity test.
//!
//! Module map:
//!
//! - [`tensor_io`]: count tensors, CSV I/O, vectorization, library sizes
//! - [`matnorm`]: matrix normal density, sampling and Kronecker algebra
//! - [`mvpln`]: latent posterior, Laplace marginal likelihood, moments
//! - [`sampler`]: multi-chain HMC over one unit's latent matrix
//! - [`diagnostics`]: PSRF, ESS and the Heidelberger–Welch test
//! - [`em`]: E-step, M-step, identifiability and the outer loop
//! - [`init`]: k-means and random initialization
//! - [`selection`]: parameter counts, information criteria, ARI
//! - [`simgen`]: synthetic data and the built-in simulation presets

pub mod diagnostics;
pub mod em;
pub mod error;
pub mod init;
pub mod linalg;
pub mod matnorm;
pub mod mvpln;
pub mod sampler;
pub mod seed;
pub mod selection;
pub mod simgen;
pub mod tensor_io;

pub use error::{Error, Result};
