//! Probabilistic ODE solving and parameter inference via Bayesian filtering.
//!
//! The solver places a Gaussian Markov process prior on the ODE solution and
//! conditions it on the ODE constraint at a grid of time points with Kalman
//! recursions, yielding a posterior distribution over the solution instead of
//! a point estimate. On top of the solver sit five likelihood/posterior
//! constructions for learning ODE parameters from noisy data (`basic`,
//! `fenrir`, `dalton`, non-Gaussian `dalton`, `magi`, plus a marginal MCMC
//! scheme), a Laplace approximation, an HMC sampler, and a batch CLI with
//! built-in benchmark models.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod inference;
pub mod interrogate;
pub mod kalman;
pub mod linalg;
pub mod models;
pub mod numdiff;
pub mod prior;
pub mod rng;
pub mod samplers;
pub mod solver;

pub use error::{Error, Result};
pub use rng::RngKey;
