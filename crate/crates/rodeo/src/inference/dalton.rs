//! DALTON: data-adaptive likelihoods that condition the solver itself on the
//! observations, via the ratio identity p(Y | Z) = p(Y, Z) / p(Z).
//!
//! The Gaussian variant runs one data-free filter pass for log p(Z = 0 | Θ)
//! and one data-augmented pass for log p(Y, Z = 0 | Θ). The non-Gaussian
//! variant replaces each observation with a Laplace-style Gaussian
//! pseudo-observation built from the gradient and Hessian of its
//! log-density, and combines three passes through a density-ratio identity
//! evaluated at the smoothed posterior means.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numerical, Result};
use crate::interrogate::interrogate;
use crate::kalman::{self, BlockState};
use crate::linalg;
use crate::prior::{BlockPrior, OdeProblem};
use crate::solver::{self, solve_forward, ForwardPass, SolverSpec};

use super::obs::{grid_indices, GaussObsModel, GenObsModel};

/// Map grid step → observation index.
fn obs_at_step(idx: &[usize], n_steps: usize) -> Vec<Option<usize>> {
    let mut map = vec![None; n_steps + 1];
    for (i, &n) in idx.iter().enumerate() {
        map[n] = Some(i);
    }
    map
}

/// log p(Z_{1:N} = 0 | Θ) accumulated from the forecast densities of a
/// data-free forward pass.
fn data_free_loglik(fwd: &ForwardPass) -> Result<f64> {
    let mut ll = 0.0;
    for step in 1..=fwd.n_steps() {
        let inter = &fwd.interrogations[step - 1];
        let pred = &fwd.predicted[step - 1];
        let obs_w = inter.obs_weight(&fwd.weight);
        let fc = kalman::block_forecast(pred, &inter.a, &obs_w, &inter.v)
            .map_err(|e| e.at_step(step))?;
        for b in &fc.blocks {
            let z = DVector::zeros(b.dim());
            ll += b.logpdf(&z).map_err(|e| e.at_step(step))?;
        }
    }
    Ok(ll)
}

struct Augmented {
    z: Vec<DVector<f64>>,
    a: Vec<DVector<f64>>,
    w: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
}

/// Append per-block observation rows (D, Ω, y) beneath the interrogated
/// constraint rows.
fn augment_blocks(
    a: &[DVector<f64>],
    obs_w: &[DMatrix<f64>],
    v: &[DMatrix<f64>],
    d_blocks: &[DMatrix<f64>],
    om_blocks: &[DMatrix<f64>],
    y_blocks: &[DVector<f64>],
) -> Augmented {
    let d = a.len();
    let mut out = Augmented { z: Vec::new(), a: Vec::new(), w: Vec::new(), v: Vec::new() };
    for k in 0..d {
        let r = a[k].len();
        let s = y_blocks[k].len();
        let mut z = DVector::zeros(r + s);
        z.rows_mut(r, s).copy_from(&y_blocks[k]);
        let mut aa = DVector::zeros(r + s);
        aa.rows_mut(0, r).copy_from(&a[k]);
        let w = linalg::vstack(&obs_w[k], &d_blocks[k]);
        let vv = linalg::block_diag(&[v[k].clone(), om_blocks[k].clone()]);
        out.z.push(z);
        out.a.push(aa);
        out.w.push(w);
        out.v.push(vv);
    }
    out
}

/// log p(Y_{0:M} | Z_{1:N} = 0, Θ) for Gaussian measurements, as the
/// difference of the data-augmented and data-free pass log-densities.
pub fn dalton_loglik(
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
    let idx = grid_indices(&obs.obs_times, problem.t_min, problem.t_max, spec.n_steps)?;
    let obs_at = obs_at_step(&idx, spec.n_steps);

    // pass 1: data-free
    let fwd = solve_forward(problem, prior, spec)?;
    let ll_z = data_free_loglik(&fwd)?;

    // pass 2: data-augmented
    let prep = solver::prepare(problem, prior, spec)?;
    let key = spec.key.split(3);
    let n = spec.n_steps;
    let d_pass = prep.problem.n_vars();
    let r = prep.problem.obs_dim();
    let mut ll_yz = 0.0;

    if let Some(i0) = obs_at[0] {
        // X_0 = v is deterministic, so an observation on the initial grid
        // point contributes its density directly.
        let (dw, dv) = super::fenrir::obs_blocks_for_pass(obs, i0, prep.merged);
        let ys = super::fenrir::data_blocks_for_pass(&data[i0], d, s, prep.merged);
        let init = solver::initial_state(&prep.problem, spec.kalman_type);
        for k in 0..d_pass {
            let (dk, om, yk) = super::obs::reduce_obs(&dw[k], &dv[k], &ys[k]);
            let mean = &dk * &init.blocks[k].mean;
            ll_yz += kalman::mvn_logpdf(&yk, &mean, &om)?;
        }
    }

    let mut state = solver::initial_state(&prep.problem, spec.kalman_type);
    for step in 1..=n {
        let t = prep.problem.t_min + step as f64 * prep.dt;
        let pred = kalman::block_predict(&state, &prep.trans, &prep.noise)
            .map_err(|e| e.at_step(step))?;
        let inter = interrogate(spec.method, key.split(step as u64), &pred, &prep.problem, t)
            .map_err(|e| e.at_step(step))?;
        let obs_w = inter.obs_weight(&prep.problem.weight);
        let (z, a, w, v) = if let Some(i) = obs_at[step] {
            let (dw_raw, dv_raw) = super::fenrir::obs_blocks_for_pass(obs, i, prep.merged);
            let ys_raw = super::fenrir::data_blocks_for_pass(&data[i], d, s, prep.merged);
            let mut dw = Vec::with_capacity(d_pass);
            let mut dv = Vec::with_capacity(d_pass);
            let mut ys = Vec::with_capacity(d_pass);
            for k in 0..d_pass {
                let (w, v, y) = super::obs::reduce_obs(&dw_raw[k], &dv_raw[k], &ys_raw[k]);
                dw.push(w);
                dv.push(v);
                ys.push(y);
            }
            let aug = augment_blocks(&inter.a, &obs_w, &inter.v, &dw, &dv, &ys);
            (aug.z, aug.a, aug.w, aug.v)
        } else {
            let z = (0..d_pass).map(|_| DVector::zeros(r)).collect();
            (z, inter.a.clone(), obs_w, inter.v.clone())
        };
        let fc = kalman::block_forecast(&pred, &a, &w, &v).map_err(|e| e.at_step(step))?;
        for (k, b) in fc.blocks.iter().enumerate() {
            ll_yz += b.logpdf(&z[k]).map_err(|e| e.at_step(step))?;
        }
        state = kalman::block_update(&pred, &z, &a, &w, &v).map_err(|e| e.at_step(step))?;
    }

    Ok(ll_yz - ll_z)
}

/// The accumulators of the non-Gaussian DALTON likelihood. The backward
/// chain densities of the textbook formulation are degenerate whenever the
/// interrogation is noise-free, so the identity is regrouped into forecast
/// densities of the pseudo-observation model plus a correction at the
/// smoothed mean μ*:
///
/// log p(Y | Z) = [log p̂(Ŷ, Z=0) − log p̂(Z=0)]
///              − Σᵢ gᵢ(Yᵢ | s*ᵢ) − Σᵢ log N(Ŷᵢ; s*ᵢ, (∇²hᵢ)⁻¹),
///
/// which is algebraically identical to ℓ_xz − ℓ_y − ℓ_xyz evaluated at μ*.
#[derive(Debug, Clone, Copy)]
pub struct DaltonNgParts {
    /// log p̂(Ŷ_{0:M}, Z_{1:N} = 0 | Θ): the data-augmented pass.
    pub l_yhat_z: f64,
    /// log p̂(Z_{1:N} = 0 | Θ): the data-free pass.
    pub l_z: f64,
    /// Σᵢ gᵢ(Yᵢ | s*ᵢ): minus the measurement log-likelihood at μ*.
    pub l_y: f64,
    /// Σᵢ log N(Ŷᵢ; s*ᵢ, (∇²hᵢ)⁻¹): the pseudo-observation density at μ*.
    pub l_yhat_at_mean: f64,
}

impl DaltonNgParts {
    pub fn total(&self) -> f64 {
        self.l_yhat_z - self.l_z - self.l_y - self.l_yhat_at_mean
    }
}

/// Rows of the Hessian block that carry curvature. Negative curvature is a
/// numerical-domain error; zero curvature means the pseudo-observation is
/// uninformative and its row is dropped.
fn curved_rows(g2: &DMatrix<f64>, i: usize) -> Result<Vec<usize>> {
    let scale = (0..g2.nrows()).map(|j| g2[(j, j)].abs()).fold(1e-300, f64::max).max(1.0);
    let tol = 1e-12 * scale;
    let mut rows = Vec::new();
    for j in 0..g2.nrows() {
        let v = g2[(j, j)];
        if v < -tol {
            return numerical(format!(
                "observation {i}: Hessian of the measurement log-density is not PSD (diagonal {v})"
            ));
        }
        if v > tol {
            rows.push(j);
        }
    }
    Ok(rows)
}

/// Detailed accumulators of the non-Gaussian DALTON likelihood.
pub fn dalton_ng_parts(
    problem: &OdeProblem,
    prior: &BlockPrior,
    spec: &SolverSpec,
    obs: &GenObsModel,
    data: &[DVector<f64>],
) -> Result<DaltonNgParts> {
    let d = problem.n_vars();
    let q = problem.state_dim();
    super::check_data_len(data, obs.n_obs())?;
    let s = obs.obs_per_var();
    for (i, m) in obs.mask.iter().enumerate() {
        if m.len() != d || m.iter().any(|b| b.nrows() != s || b.ncols() != q) {
            return invalid(format!("observation {i} mask must be {d} blocks of {s}x{q}"));
        }
    }
    let idx = grid_indices(&obs.obs_times, problem.t_min, problem.t_max, spec.n_steps)?;
    let obs_at = obs_at_step(&idx, spec.n_steps);

    let prep = solver::prepare(problem, prior, spec)?;
    let key = spec.key.split(3);
    let n = spec.n_steps;
    let d_pass = prep.problem.n_vars();
    let r = prep.problem.obs_dim();
    let s_pass = d * s / d_pass;

    // per-observation pseudo-observation pieces, kept for the correction term
    struct Pseudo {
        // per pass-block: selected rows, their selection matrix, value, noise
        d_blocks: Vec<DMatrix<f64>>,
        om_blocks: Vec<DMatrix<f64>>,
        y_blocks: Vec<DVector<f64>>,
    }
    let mut pseudo: Vec<Option<Pseudo>> = (0..obs.n_obs()).map(|_| None).collect();

    // pass A: filter conditioned on Gaussian pseudo-observations,
    // accumulating log p̂(Ŷ, Z = 0) through the forecast densities
    let mut l_yhat_z = 0.0;
    let mut filtered_a: Vec<BlockState> = vec![solver::initial_state(&prep.problem, spec.kalman_type)];
    let mut predicted_a: Vec<BlockState> = Vec::with_capacity(n);
    for step in 1..=n {
        let t = prep.problem.t_min + step as f64 * prep.dt;
        let pred = kalman::block_predict(&filtered_a[step - 1], &prep.trans, &prep.noise)
            .map_err(|e| e.at_step(step))?;
        let inter = interrogate(spec.method, key.split(step as u64), &pred, &prep.problem, t)
            .map_err(|e| e.at_step(step))?;
        let obs_w = inter.obs_weight(&prep.problem.weight);
        let (z, a, w, v) = if let Some(i) = obs_at[step] {
            // linearize the measurement log-density at the predicted mean
            let mu = solver::unmerge_mean(&pred, d, q);
            let s_hat = obs.select(i, &mu);
            let g1 = obs.h_grad(i, &data[i], &s_hat).map_err(|e| e.at_step(step))?;
            let g2 = obs.h_hess(i, &data[i], &s_hat).map_err(|e| e.at_step(step))?;
            let masks: Vec<DMatrix<f64>> = if prep.merged {
                vec![linalg::block_diag(&obs.mask[i])]
            } else {
                obs.mask[i].clone()
            };
            let mut d_blocks = Vec::with_capacity(d_pass);
            let mut om_blocks = Vec::with_capacity(d_pass);
            let mut y_blocks = Vec::with_capacity(d_pass);
            for k in 0..d_pass {
                let rows_k: Vec<usize> = (k * s_pass..(k + 1) * s_pass).collect();
                let g2_k = linalg::gather_mat(&g2, &rows_k, &rows_k);
                let keep = curved_rows(&g2_k, i)?;
                let observed: Vec<usize> = keep
                    .iter()
                    .copied()
                    .filter(|&j| masks[k].row(j).iter().any(|x| *x != 0.0))
                    .collect();
                if observed.is_empty() {
                    d_blocks.push(DMatrix::zeros(0, masks[k].ncols()));
                    om_blocks.push(DMatrix::zeros(0, 0));
                    y_blocks.push(DVector::zeros(0));
                    continue;
                }
                let g2_sub = linalg::gather_mat(&g2_k, &observed, &observed);
                let chol = linalg::chol_psd(&g2_sub, "measurement Hessian").map_err(|_| {
                    crate::error::Error::Numerical(format!(
                        "observation {i}: Hessian of the measurement log-density is not PSD"
                    ))
                })?;
                let noise_k = linalg::symmetrize(&chol.inverse());
                let g1_k = DVector::from_fn(observed.len(), |jj, _| g1[rows_k[observed[jj]]]);
                let d_sub = linalg::gather_rows(&masks[k], &observed);
                let s_sub = &d_sub * &pred.blocks[k].mean;
                let y_hat = &s_sub - &noise_k * g1_k;
                d_blocks.push(d_sub);
                om_blocks.push(noise_k);
                y_blocks.push(y_hat);
            }
            let aug = augment_blocks(&inter.a, &obs_w, &inter.v, &d_blocks, &om_blocks, &y_blocks);
            pseudo[i] = Some(Pseudo { d_blocks, om_blocks, y_blocks });
            (aug.z, aug.a, aug.w, aug.v)
        } else {
            let z = (0..d_pass).map(|_| DVector::zeros(r)).collect();
            (z, inter.a.clone(), obs_w, inter.v.clone())
        };
        let fc = kalman::block_forecast(&pred, &a, &w, &v).map_err(|e| e.at_step(step))?;
        for (k, b) in fc.blocks.iter().enumerate() {
            l_yhat_z += b.logpdf(&z[k]).map_err(|e| e.at_step(step))?;
        }
        let filt = kalman::block_update(&pred, &z, &a, &w, &v).map_err(|e| e.at_step(step))?;
        predicted_a.push(pred);
        filtered_a.push(filt);
    }

    // smoothed means of pass A: the evaluation point μ* of the correction
    let mut smoothed: Vec<BlockState> = vec![filtered_a[n].clone()];
    for step in (0..n).rev() {
        let sm = kalman::block_smooth(
            &smoothed[smoothed.len() - 1],
            &filtered_a[step],
            &predicted_a[step],
            &prep.trans,
            &prep.noise,
        )
        .map_err(|e| e.at_step(step))?;
        smoothed.push(sm);
    }
    smoothed.reverse();

    // pass B: data-free filter
    let fwd = solve_forward(problem, prior, spec)?;
    let l_z = data_free_loglik(&fwd)?;

    // correction at the smoothed means
    let mut l_y = 0.0;
    let mut l_yhat_at_mean = 0.0;
    for (i, &ni) in idx.iter().enumerate() {
        let mu = solver::unmerge_mean(&smoothed[ni], d, q);
        let s_i = obs.select(i, &mu);
        let v = obs.loglik_at(i, &data[i], &s_i);
        if v.is_nan() {
            return numerical(format!("observation log-likelihood {i} returned NaN"));
        }
        l_y -= v;
        if let Some(ps) = &pseudo[i] {
            for k in 0..d_pass {
                if ps.y_blocks[k].is_empty() {
                    continue;
                }
                let mean = &ps.d_blocks[k] * &smoothed[ni].blocks[k].mean;
                l_yhat_at_mean +=
                    kalman::mvn_logpdf(&ps.y_blocks[k], &mean, &ps.om_blocks[k])?;
            }
        }
    }

    Ok(DaltonNgParts { l_yhat_z, l_z, l_y, l_yhat_at_mean })
}

/// log p(Y_{0:M} | Z_{1:N} = 0, Θ) for a generic measurement model.
pub fn dalton_ng_loglik(
    problem: &OdeProblem,
    prior: &BlockPrior,
    spec: &SolverSpec,
    obs: &GenObsModel,
    data: &[DVector<f64>],
) -> Result<f64> {
    Ok(dalton_ng_parts(problem, prior, spec, obs, data)?.total())
}
