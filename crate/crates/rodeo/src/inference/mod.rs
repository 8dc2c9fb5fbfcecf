//! Likelihood and posterior constructions for ODE parameter inference:
//! the plug-in Basic approximation, the Fenrir and DALTON Gaussian marginal
//! likelihoods, the non-Gaussian DALTON variant, the MAGI joint posterior,
//! and the marginal MCMC accept/reject step.

mod dalton;
mod fenrir;
mod magi;
mod marginal;
pub mod obs;

pub use dalton::{dalton_loglik, dalton_ng_loglik, dalton_ng_parts, DaltonNgParts};
pub use fenrir::fenrir_loglik;
pub use magi::{magi_beta, magi_logpost, magi_logpost_grad_u, MagiConfig};
pub use marginal::{marginal_init, marginal_mcmc_step, MarginalProposal, MarginalState, MarginalTarget};
pub use obs::{grid_index, grid_indices, GaussObsModel, GenObsModel, ObsModel};

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::prior::{BlockPrior, OdeProblem};
use crate::solver::{solve_mv, SolverSpec};

fn check_data_len(data: &[DVector<f64>], n_obs: usize) -> Result<()> {
    if data.len() != n_obs {
        return invalid(format!(
            "data has {} observations but the model schedules {n_obs}",
            data.len()
        ));
    }
    Ok(())
}

/// Plug-in likelihood: run the solver, insert the posterior mean into the
/// measurement model, and sum the per-observation log-densities. Fast, but
/// blind to solver uncertainty.
pub fn basic_loglik(
    problem: &OdeProblem,
    prior: &BlockPrior,
    spec: &SolverSpec,
    obs: &ObsModel,
    data: &[DVector<f64>],
) -> Result<f64> {
    check_data_len(data, obs.obs_times().len())?;
    let idx = obs::grid_indices(obs.obs_times(), problem.t_min, problem.t_max, spec.n_steps)?;
    let mv = solve_mv(problem, prior, spec)?;
    let mut ll = 0.0;
    for (i, &n) in idx.iter().enumerate() {
        ll += obs.loglik_at_state(i, &data[i], &mv.means[n])?;
    }
    Ok(ll)
}
