//! Marginal MCMC: Metropolis–Hastings over parameters where each proposal
//! carries a fresh stochastic solver draw. The solution density appears in
//! both the target and the proposal kernel and cancels from the acceptance
//! ratio, so only the prior and the measurement likelihood are evaluated.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::interrogate::InterrogationMethod;
use crate::kalman::KalmanType;
use crate::prior::{BlockPrior, OdeProblem};
use crate::rng::RngKey;
use crate::solver::{solve_sim, SolverSpec};

use super::obs::grid_indices;

/// The pieces of the marginal MCMC target.
pub struct MarginalTarget<'a> {
    /// log π(Θ); may be −∞ outside the support.
    pub log_prior: &'a (dyn Fn(&DVector<f64>) -> f64 + Sync),
    /// Θ → (problem, prior) at the solver discretization.
    pub build: &'a (dyn Fn(&DVector<f64>) -> Result<(OdeProblem, BlockPrior)> + Sync),
    /// log p(Y | X at the observation grid points, Θ).
    pub obs_loglik: &'a (dyn Fn(&DVector<f64>, &[DMatrix<f64>]) -> f64 + Sync),
    pub obs_times: &'a [f64],
    pub n_steps: usize,
    /// Interrogation for the stochastic solver draw (the construction is
    /// designed around the sampled interrogation).
    pub method: InterrogationMethod,
    pub kalman_type: KalmanType,
}

impl MarginalTarget<'_> {
    fn draw_path(&self, key: RngKey, theta: &DVector<f64>) -> Result<(Vec<DMatrix<f64>>, f64)> {
        let (problem, prior) = (self.build)(theta)?;
        let spec = SolverSpec::new(self.n_steps, self.method)
            .with_kalman_type(self.kalman_type)
            .with_key(key);
        let path = solve_sim(&problem, &prior, &spec)?;
        let idx = grid_indices(self.obs_times, problem.t_min, problem.t_max, self.n_steps)?;
        let at_obs: Vec<DMatrix<f64>> = idx.into_iter().map(|n| path[n].clone()).collect();
        let ll = (self.obs_loglik)(theta, &at_obs);
        Ok((at_obs, ll))
    }
}

/// Current chain position with its cached solver draw and likelihood.
#[derive(Debug, Clone)]
pub struct MarginalState {
    pub theta: DVector<f64>,
    pub path_at_obs: Vec<DMatrix<f64>>,
    pub log_prior: f64,
    pub obs_ll: f64,
}

/// Proposal kernel for the parameter move.
pub enum MarginalProposal {
    /// Θ′ ~ N(Θ, diag(σ²)); symmetric, so the kernel cancels in the ratio.
    RandomWalk(DVector<f64>),
}

impl MarginalProposal {
    fn propose(&self, key: RngKey, current: &DVector<f64>) -> DVector<f64> {
        match self {
            MarginalProposal::RandomWalk(sigma) => {
                let eps = key.normal_vector(current.len());
                DVector::from_fn(current.len(), |i, _| current[i] + sigma[i] * eps[i])
            }
        }
    }

    fn log_ratio(&self, _current: &DVector<f64>, _proposed: &DVector<f64>) -> f64 {
        match self {
            MarginalProposal::RandomWalk(_) => 0.0,
        }
    }
}

/// Initialize the chain at `theta0` with one stochastic solver draw.
pub fn marginal_init(
    key: RngKey,
    target: &MarginalTarget<'_>,
    theta0: &DVector<f64>,
) -> Result<MarginalState> {
    let lp = (target.log_prior)(theta0);
    let (path, ll) = target.draw_path(key, theta0)?;
    Ok(MarginalState { theta: theta0.clone(), path_at_obs: path, log_prior: lp, obs_ll: ll })
}

/// Outcome of one accept/reject step.
pub struct StepOutcome {
    pub state: MarginalState,
    pub accepted: bool,
    /// min(1, ρ): the acceptance probability actually used.
    pub alpha: f64,
}

/// One Metropolis–Hastings step: propose Θ′, draw a fresh solution path at
/// Θ′, and accept with the marginal ratio. Deterministic in `key`.
pub fn marginal_mcmc_step(
    key: RngKey,
    target: &MarginalTarget<'_>,
    current: MarginalState,
    proposal: &MarginalProposal,
) -> Result<StepOutcome> {
    let theta_prop = proposal.propose(key.split(0), &current.theta);
    let lp_prop = (target.log_prior)(&theta_prop);
    if !lp_prop.is_finite() {
        return Ok(StepOutcome { state: current, accepted: false, alpha: 0.0 });
    }
    let (path_prop, ll_prop) = match target.draw_path(key.split(1), &theta_prop) {
        Ok(v) => v,
        // a numerical failure at the proposal is an automatic rejection
        Err(crate::error::Error::Numerical(_)) | Err(crate::error::Error::Step { .. }) => {
            return Ok(StepOutcome { state: current, accepted: false, alpha: 0.0 });
        }
        Err(e) => return Err(e),
    };
    if ll_prop.is_nan() {
        return Ok(StepOutcome { state: current, accepted: false, alpha: 0.0 });
    }
    let log_ratio = lp_prop + ll_prop - current.log_prior - current.obs_ll
        + proposal.log_ratio(&current.theta, &theta_prop);
    let alpha = log_ratio.min(0.0).exp();
    let accepted = key.split(2).uniform() < alpha;
    let state = if accepted {
        MarginalState { theta: theta_prop, path_at_obs: path_prop, log_prior: lp_prop, obs_ll: ll_prop }
    } else {
        current
    };
    Ok(StepOutcome { state, accepted, alpha })
}
