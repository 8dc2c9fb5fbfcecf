//! MAGI: the exact-constraint joint posterior over parameters and the latent
//! trajectory, with the noise-free state-space model and a prior-tempering
//! parameter β.
//!
//! The latent variables Ũ_{0:N} are the active derivatives; the constrained
//! coordinates are reconstructed as X̃_n = (Ũ_n, f_θ(Ũ_n, t_n)) (a change of
//! variables with unit Jacobian determinant), and the Gaussian Markov prior
//! density of the X̃ sequence is evaluated by a Kalman forecast/update
//! recursion over the full padded state.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::kalman::{self, Cov, GaussState, KalmanType};
use crate::numdiff::{fd_grad, fd_jac, FdConfig};
use crate::prior::{BlockPrior, OdeProblem};

use super::obs::{grid_indices, ObsModel};

/// Prior temperature β = η⁻²·Δt^(2−2q)·Δt′, proportional to the inverse of
/// the dominant prior-noise entry scaled by the observation spacing.
pub fn magi_beta(eta: f64, dt: f64, q: usize, dt_obs: f64) -> f64 {
    eta.powi(-2) * dt.powf(2.0 - 2.0 * q as f64) * dt_obs
}

#[derive(Debug, Clone, Copy)]
pub struct MagiConfig {
    /// Prior temperature; the Markov term is scaled by 1/β.
    pub beta: f64,
    /// Number of active derivatives q̃ per variable (the latent columns).
    pub n_active: usize,
    pub kalman_type: KalmanType,
}

/// The weight must be a constant derivative-selection matrix: block row i
/// selects coordinate n_active + i with a unit entry.
fn validate_selection(problem: &OdeProblem, n_active: usize) -> Result<usize> {
    let q = problem.state_dim();
    let r = problem.obs_dim();
    if n_active + r > q {
        return invalid(format!(
            "n_active = {n_active} plus {r} constrained coordinates exceeds the state dimension {q}"
        ));
    }
    for (k, w) in problem.weight.iter().enumerate() {
        for i in 0..r {
            for j in 0..q {
                let expect = if j == n_active + i { 1.0 } else { 0.0 };
                if w[(i, j)] != expect {
                    return invalid(format!(
                        "magi requires a constant derivative-selection weight; block {k} is not [0 I 0] at the active split"
                    ));
                }
            }
        }
    }
    Ok(n_active + r)
}

/// X̃_n = (Ũ_n, f(Ũ_n, t_n)): d×(q̃+r), with f evaluated on the state padded
/// with zeros beyond the active derivatives.
fn x_tilde_seq(
    u_tilde: &[DMatrix<f64>],
    problem: &OdeProblem,
    n_active: usize,
    n_steps: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let d = problem.n_vars();
    let q = problem.state_dim();
    let r = problem.obs_dim();
    let dt = (problem.t_max - problem.t_min) / n_steps as f64;
    if u_tilde.len() != n_steps + 1 {
        return invalid(format!(
            "u_tilde must have {} entries (one per grid point), got {}",
            n_steps + 1,
            u_tilde.len()
        ));
    }
    let mut out = Vec::with_capacity(u_tilde.len());
    for (n, u) in u_tilde.iter().enumerate() {
        if u.nrows() != d || u.ncols() != n_active {
            return invalid(format!("u_tilde[{n}] must be {d}x{n_active}"));
        }
        let t = problem.t_min + n as f64 * dt;
        let mut x_full = DMatrix::zeros(d, q);
        x_full.view_mut((0, 0), (d, n_active)).copy_from(u);
        let f = (problem.field)(&x_full, t);
        let mut xt = DMatrix::zeros(d, n_active + r);
        xt.view_mut((0, 0), (d, n_active)).copy_from(u);
        xt.view_mut((0, n_active), (d, r)).copy_from(&f);
        out.push(xt);
    }
    Ok(out)
}

fn subset_weight(q_sub: usize, q: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(q_sub, q);
    for i in 0..q_sub {
        w[(i, i)] = 1.0;
    }
    w
}

/// log p(X̃_{1:N} | η) by the forecast/update recursion with the exact
/// subset observation W̃ = [I 0] and V = 0.
fn markov_loglik(
    x_tilde: &[DMatrix<f64>],
    problem: &OdeProblem,
    prior: &BlockPrior,
    q_sub: usize,
    kind: KalmanType,
) -> Result<f64> {
    let d = problem.n_vars();
    let q = problem.state_dim();
    let w_sub = subset_weight(q_sub, q);
    let v_zero = DMatrix::zeros(q_sub, q_sub);
    let noise: Vec<Cov> =
        prior.noise.iter().map(|r| Cov::from_dense(kind, r)).collect::<Result<Vec<_>>>()?;
    let mut ll = 0.0;
    let mut state: Vec<GaussState> = (0..d)
        .map(|k| {
            GaussState::deterministic(kind, DVector::from_fn(q, |j, _| problem.init[(k, j)]))
        })
        .collect();
    for n in 1..x_tilde.len() {
        for k in 0..d {
            let pred = kalman::predict(
                &state[k],
                &DVector::zeros(q),
                &prior.trans[k],
                &noise[k],
            )
            .map_err(|e| e.at_step(n))?;
            let fc = kalman::forecast(&pred, &DVector::zeros(q_sub), &w_sub, &v_zero)
                .map_err(|e| e.at_step(n))?;
            let xt = x_tilde[n].row(k).transpose().rows(0, q_sub).into_owned();
            ll += fc.logpdf(&xt).map_err(|e| e.at_step(n))?;
            state[k] = kalman::update(&pred, &xt, &DVector::zeros(q_sub), &w_sub, &v_zero)
                .map_err(|e| e.at_step(n))?;
        }
    }
    Ok(ll)
}

fn measurement_loglik(
    x_tilde: &[DMatrix<f64>],
    problem: &OdeProblem,
    obs: &ObsModel,
    data: &[DVector<f64>],
    q_sub: usize,
    n_steps: usize,
) -> Result<f64> {
    let d = problem.n_vars();
    let q = problem.state_dim();
    let idx = grid_indices(obs.obs_times(), problem.t_min, problem.t_max, n_steps)?;
    super::check_data_len(data, idx.len())?;
    let mut ll = 0.0;
    for (i, &n) in idx.iter().enumerate() {
        let mut x_full = DMatrix::zeros(d, q);
        x_full.view_mut((0, 0), (d, q_sub)).copy_from(&x_tilde[n]);
        ll += obs.loglik_at_state(i, &data[i], &x_full)?;
    }
    Ok(ll)
}

/// The β-modulated joint log-posterior
/// log π(Θ) + (1/β)·log p(X̃(Ũ) | η) + log p(Y | X̃(Ũ), φ).
///
/// `log_prior` is log π(Θ) evaluated by the caller; the problem's field and
/// init already carry Θ.
pub fn magi_logpost(
    u_tilde: &[DMatrix<f64>],
    problem: &OdeProblem,
    prior: &BlockPrior,
    obs: &ObsModel,
    data: &[DVector<f64>],
    cfg: &MagiConfig,
    log_prior: f64,
) -> Result<f64> {
    problem.validate()?;
    if !(cfg.beta > 0.0) {
        return invalid(format!("magi needs beta > 0, got {}", cfg.beta));
    }
    let n_steps = u_tilde.len().saturating_sub(1);
    if n_steps == 0 {
        return invalid("u_tilde must cover at least one step");
    }
    let q_sub = validate_selection(problem, cfg.n_active)?;
    let xt = x_tilde_seq(u_tilde, problem, cfg.n_active, n_steps)?;
    let markov = markov_loglik(&xt, problem, prior, q_sub, cfg.kalman_type)?;
    let meas = measurement_loglik(&xt, problem, obs, data, q_sub, n_steps)?;
    Ok(log_prior + markov / cfg.beta + meas)
}

/// Jacobian of the field with respect to the active derivatives, (d·r)×(d·q̃),
/// analytic when the problem carries one, otherwise finite differences.
fn field_jac_active(
    problem: &OdeProblem,
    u: &DMatrix<f64>,
    t: f64,
    n_active: usize,
) -> Result<DMatrix<f64>> {
    let d = problem.n_vars();
    let q = problem.state_dim();
    let r = problem.obs_dim();
    if let Some(jac) = &problem.jacobian {
        let mut x_full = DMatrix::zeros(d, q);
        x_full.view_mut((0, 0), (d, n_active)).copy_from(u);
        let j = jac(&x_full, t);
        let cols: Vec<usize> = (0..d).flat_map(|k| (0..n_active).map(move |j| k * q + j)).collect();
        let rows: Vec<usize> = (0..d * r).collect();
        return Ok(crate::linalg::gather_mat(&j, &rows, &cols));
    }
    let field = problem.field.clone();
    let flat = DVector::from_fn(d * n_active, |i, _| u[(i / n_active, i % n_active)]);
    fd_jac(
        |v: &DVector<f64>| {
            let mut x_full = DMatrix::zeros(d, q);
            for k in 0..d {
                for j in 0..n_active {
                    x_full[(k, j)] = v[k * n_active + j];
                }
            }
            let f = field(&x_full, t);
            DVector::from_fn(d * r, |i, _| f[(i / r, i % r)])
        },
        &flat,
        &FdConfig::default(),
    )
}

/// Value and gradient with respect to the latent Ũ_{0:N}.
///
/// The Markov term's gradient comes from a reverse sweep of the filter
/// recursion (the covariances do not depend on the values, so only the mean
/// recursion is differentiated); the measurement term's gradient uses the
/// observation model's derivatives; both are chained through ∂f/∂Ũ.
pub fn magi_logpost_grad_u(
    u_tilde: &[DMatrix<f64>],
    problem: &OdeProblem,
    prior: &BlockPrior,
    obs: &ObsModel,
    data: &[DVector<f64>],
    cfg: &MagiConfig,
    log_prior: f64,
) -> Result<(f64, Vec<DMatrix<f64>>)> {
    problem.validate()?;
    if !(cfg.beta > 0.0) {
        return invalid(format!("magi needs beta > 0, got {}", cfg.beta));
    }
    let n = u_tilde.len().saturating_sub(1);
    if n == 0 {
        return invalid("u_tilde must cover at least one step");
    }
    let q_sub = validate_selection(problem, cfg.n_active)?;
    let d = problem.n_vars();
    let q = problem.state_dim();
    let r = problem.obs_dim();
    let qa = cfg.n_active;
    let dt = (problem.t_max - problem.t_min) / n as f64;
    let xt = x_tilde_seq(u_tilde, problem, qa, n)?;
    let w_sub = subset_weight(q_sub, q);

    // forward filter per block, storing residual solves and gains
    let mut ll_markov = 0.0;
    let mut sinv_r: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(n); d];
    let mut gains: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(n); d];
    for k in 0..d {
        let mut mean = DVector::from_fn(q, |j, _| problem.init[(k, j)]);
        let mut cov = DMatrix::zeros(q, q);
        for step in 1..=n {
            let (pm, pc) = (
                &prior.trans[k] * &mean,
                crate::linalg::symmetrize(
                    &(&prior.trans[k] * &cov * prior.trans[k].transpose() + &prior.noise[k]),
                ),
            );
            let s = pc.view((0, 0), (q_sub, q_sub)).into_owned();
            let chol = crate::linalg::chol_psd(&s, "magi forecast covariance")
                .map_err(|e| e.at_step(step))?;
            let xv = xt[step].row(k).transpose();
            let resid = &xv - pm.rows(0, q_sub).into_owned();
            let alpha = chol.solve(&resid);
            ll_markov += -0.5
                * (q_sub as f64 * crate::linalg::LN_2PI
                    + crate::linalg::logdet(&chol)
                    + resid.dot(&alpha));
            let cwt = &pc * w_sub.transpose();
            let gain = crate::linalg::solve_right(&chol, &cwt);
            mean = &pm + &gain * &resid;
            cov = crate::linalg::symmetrize(&(&pc - &gain * &w_sub * &pc));
            sinv_r[k].push(alpha);
            gains[k].push(gain);
        }
    }

    // reverse sweep: adjoint of the mean recursion
    let mut grad_xt: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, q_sub); n + 1];
    for k in 0..d {
        let mut adj_m = DVector::zeros(q);
        for step in (1..=n).rev() {
            let g_r = -&sinv_r[k][step - 1] + gains[k][step - 1].transpose() * &adj_m;
            for j in 0..q_sub {
                grad_xt[step][(k, j)] += g_r[j] / cfg.beta;
            }
            let adj_p = &adj_m - w_sub.transpose() * &g_r;
            adj_m = prior.trans[k].transpose() * adj_p;
        }
    }

    // measurement term and its gradient in x̃
    let idx = grid_indices(obs.obs_times(), problem.t_min, problem.t_max, n)?;
    super::check_data_len(data, idx.len())?;
    let mut ll_meas = 0.0;
    for (i, &ni) in idx.iter().enumerate() {
        let mut x_full = DMatrix::zeros(d, q);
        x_full.view_mut((0, 0), (d, q_sub)).copy_from(&xt[ni]);
        ll_meas += obs.loglik_at_state(i, &data[i], &x_full)?;
        match obs {
            ObsModel::Gauss(g) => {
                for k in 0..d {
                    let dk = &g.weight[i][k];
                    let om = &g.var[i][k];
                    let act: Vec<usize> = (0..dk.nrows()).filter(|&j| om[(j, j)] != 0.0).collect();
                    if act.is_empty() {
                        continue;
                    }
                    let cols: Vec<usize> = (0..q_sub).collect();
                    let d_act = crate::linalg::gather_mat(dk, &act, &cols);
                    let om_act = crate::linalg::gather_mat(om, &act, &act);
                    let y_act = crate::linalg::gather_vec(&data[i].rows(k * dk.nrows(), dk.nrows()).into_owned(), &act);
                    let e = &y_act - &d_act * xt[ni].row(k).transpose();
                    let chol = crate::linalg::chol_psd(&om_act, "observation variance")?;
                    let g_x = d_act.transpose() * chol.solve(&e);
                    for j in 0..q_sub {
                        grad_xt[ni][(k, j)] += g_x[j];
                    }
                }
            }
            ObsModel::General(g) => {
                let s = g.select(i, &x_full);
                let gr = match &g.grad {
                    Some(gf) => gf(i, &data[i], &s),
                    None => {
                        let f = g.loglik.clone();
                        let y = data[i].clone();
                        fd_grad(|v| f(i, &y, v), &s, &FdConfig::default())?
                    }
                };
                let sv = g.obs_per_var();
                for k in 0..d {
                    let dk = &g.mask[i][k];
                    for row in 0..sv {
                        let gval = gr[k * sv + row];
                        if gval == 0.0 {
                            continue;
                        }
                        for j in 0..q_sub.min(q) {
                            grad_xt[ni][(k, j)] += dk[(row, j)] * gval;
                        }
                    }
                }
            }
        }
    }

    // chain ∂x̃/∂Ũ: identity on the active columns, field Jacobian on the rest
    let mut grad_u = vec![DMatrix::zeros(d, qa); n + 1];
    for step in 0..=n {
        let gx = &grad_xt[step];
        for k in 0..d {
            for j in 0..qa {
                grad_u[step][(k, j)] = gx[(k, j)];
            }
        }
        let gf = DVector::from_fn(d * r, |i, _| gx[(i / r, qa + i % r)]);
        if gf.amax() != 0.0 {
            let t = problem.t_min + step as f64 * dt;
            let jac = field_jac_active(problem, &u_tilde[step], t, qa)?;
            let chained = jac.transpose() * gf;
            for k in 0..d {
                for j in 0..qa {
                    grad_u[step][(k, j)] += chained[k * qa + j];
                }
            }
        }
    }

    Ok((log_prior + ll_markov / cfg.beta + ll_meas, grad_u))
}
