//! Fenrir: the Gaussian marginal likelihood p(Y | Z = 0, Θ) computed from
//! the backward Markov representation of the ODE solution posterior.
//!
//! The forward interrogated filter is run once; the posterior is then
//! rewritten as a backward-in-time Gaussian Markov chain (Aₙ, bₙ, Cₙ), and
//! the Gaussian observations are absorbed one by one while accumulating
//! their forecast log-densities.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::kalman::{self, BlockState};
use crate::prior::{BlockPrior, OdeProblem};
use crate::solver::{solve_forward, SolverSpec};

use super::obs::{grid_indices, split_obs, GaussObsModel};

/// Per-time observation blocks in the pass layout (merged iff the forward
/// pass ran merged).
pub(crate) fn obs_blocks_for_pass(
    obs: &GaussObsModel,
    i: usize,
    merged: bool,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    if merged {
        (vec![obs.merged_weight(i)], vec![obs.merged_var(i)])
    } else {
        (obs.weight[i].clone(), obs.var[i].clone())
    }
}

pub(crate) fn data_blocks_for_pass(
    y: &DVector<f64>,
    d: usize,
    s: usize,
    merged: bool,
) -> Vec<DVector<f64>> {
    if merged {
        vec![y.clone()]
    } else {
        split_obs(y, d, s)
    }
}

/// log p(Y_{0:M} | Z_{1:N} = 0, Θ) for a Gaussian measurement model.
pub fn fenrir_loglik(
    problem: &OdeProblem,
    prior: &BlockPrior,
    spec: &SolverSpec,
    obs: &GaussObsModel,
    data: &[DVector<f64>],
) -> Result<f64> {
    let d = problem.n_vars();
    let q = problem.state_dim();
    obs.validate(d, q)?;
    super::check_data_len(data, obs.n_obs())?;
    let s = obs.obs_per_var();
    for (i, y) in data.iter().enumerate() {
        if y.len() != d * s {
            return invalid(format!("observation {i} has length {}, expected {}", y.len(), d * s));
        }
    }
    let idx = grid_indices(&obs.obs_times, problem.t_min, problem.t_max, spec.n_steps)?;

    let fwd = solve_forward(problem, prior, spec)?;
    let n = fwd.n_steps();
    let mut ll = 0.0;
    // next observation to absorb, walking backwards
    let mut i = obs.n_obs() as isize - 1;

    // backward-chain head at n = N is the filtered terminal state
    let mut state: BlockState = fwd.filtered[n].clone();
    let absorb = |state: &mut BlockState, i: usize, step: usize| -> Result<f64> {
        let (dw_raw, dv_raw) = obs_blocks_for_pass(obs, i, fwd.merged);
        let ys_raw = data_blocks_for_pass(&data[i], d, s, fwd.merged);
        let mut dw = Vec::with_capacity(dw_raw.len());
        let mut dv = Vec::with_capacity(dw_raw.len());
        let mut ys = Vec::with_capacity(dw_raw.len());
        for k in 0..dw_raw.len() {
            let (w, v, y) = super::obs::reduce_obs(&dw_raw[k], &dv_raw[k], &ys_raw[k]);
            dw.push(w);
            dv.push(v);
            ys.push(y);
        }
        let zeros: Vec<DVector<f64>> = dw.iter().map(|w| DVector::zeros(w.nrows())).collect();
        let fc = kalman::block_forecast(state, &zeros, &dw, &dv).map_err(|e| e.at_step(step))?;
        let mut ll_i = 0.0;
        for (k, y) in ys.iter().enumerate() {
            ll_i += fc.blocks[k].logpdf(y).map_err(|e| e.at_step(step))?;
        }
        *state = kalman::block_update(state, &ys, &zeros, &dw, &dv).map_err(|e| e.at_step(step))?;
        Ok(ll_i)
    };

    if i >= 0 && idx[i as usize] == n {
        ll += absorb(&mut state, i as usize, n)?;
        i -= 1;
    }
    for step in (0..n).rev() {
        // backward conditional X_step | X_{step+1}
        let conds = kalman::block_condition(
            &fwd.filtered[step],
            &fwd.predicted[step],
            &fwd.trans,
            &fwd.noise,
        )
        .map_err(|e| e.at_step(step))?;
        let blocks = state
            .blocks
            .iter()
            .zip(conds.iter())
            .map(|(b, c)| kalman::predict(b, &c.offset, &c.gain, &c.cond_cov))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_step(step))?;
        state = BlockState::new(blocks)?;
        if i >= 0 && idx[i as usize] == step {
            ll += absorb(&mut state, i as usize, step)?;
            i -= 1;
        }
    }
    Ok(ll)
}
