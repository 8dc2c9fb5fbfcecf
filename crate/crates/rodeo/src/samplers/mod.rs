//! Posterior summarization and sampling: Laplace approximation, Hamiltonian
//! Monte Carlo with warmup adaptation, and the random-walk driver for the
//! marginal MCMC scheme.

mod hmc;
mod laplace;
mod rwm;

pub use hmc::{hmc_chain, HmcOptions};
pub use laplace::{laplace_fit, LaplaceOptions, LaplaceResult};
pub use rwm::rwm_marginal_chain;

use nalgebra::DVector;

/// Draws and diagnostics of an MCMC run.
#[derive(Debug, Clone)]
pub struct ChainResult {
    pub draws: Vec<DVector<f64>>,
    pub acceptance_rate: f64,
    /// Adapted leapfrog step size (HMC only).
    pub step_size: Option<f64>,
    /// Adapted diagonal mass (HMC only).
    pub mass_diag: Option<DVector<f64>>,
    /// Trajectories rejected for an energy error beyond the divergence cutoff.
    pub divergences: usize,
    /// Set when every post-warmup proposal was rejected.
    pub all_rejected: bool,
}

impl ChainResult {
    /// Column-wise posterior mean.
    pub fn mean(&self) -> DVector<f64> {
        let dim = self.draws[0].len();
        let mut m = DVector::zeros(dim);
        for d in &self.draws {
            m += d;
        }
        m / self.draws.len() as f64
    }

    /// Column-wise posterior variance.
    pub fn variance(&self) -> DVector<f64> {
        let m = self.mean();
        let dim = m.len();
        let mut v = DVector::zeros(dim);
        for d in &self.draws {
            for j in 0..dim {
                v[j] += (d[j] - m[j]) * (d[j] - m[j]);
            }
        }
        v / (self.draws.len() as f64 - 1.0)
    }
}
