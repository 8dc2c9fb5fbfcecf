//! Measurement models over the solution state, and the mapping of
//! observation times onto the solver grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numerical, Result};
use crate::linalg::{block_diag, stack_vec};
use crate::numdiff::{fd_grad, fd_hess, FdConfig};

/// Round an observation time to its grid index n(i); times further than half
/// a step from any grid point are rejected.
pub fn grid_index(t: f64, t_min: f64, t_max: f64, n_steps: usize) -> Result<usize> {
    let dt = (t_max - t_min) / n_steps as f64;
    let raw = ((t - t_min) / dt).round();
    let n = raw.clamp(0.0, n_steps as f64) as usize;
    let nearest = t_min + n as f64 * dt;
    if (t - nearest).abs() > 0.5 * dt * (1.0 + 1e-9) {
        return invalid(format!(
            "observation time {t} is off the solution grid (nearest point {nearest}, step {dt})"
        ));
    }
    Ok(n)
}

/// Grid indices for a strictly increasing observation schedule; two
/// observations may not share a grid point.
pub fn grid_indices(obs_times: &[f64], t_min: f64, t_max: f64, n_steps: usize) -> Result<Vec<usize>> {
    let idx = obs_times
        .iter()
        .map(|&t| grid_index(t, t_min, t_max, n_steps))
        .collect::<Result<Vec<_>>>()?;
    for w in idx.windows(2) {
        if w[1] <= w[0] {
            return invalid(format!(
                "observation times must map to strictly increasing grid indices, got {} then {}",
                w[0], w[1]
            ));
        }
    }
    Ok(idx)
}

/// Gaussian measurement model Y_i ~ N(D_i·X_{n(i)}, Ω_i), stored blockwise:
/// per time i and per variable k, an s×q weight block and an s×s noise block.
/// Unobserved components carry all-zero weight and noise rows.
#[derive(Debug, Clone)]
pub struct GaussObsModel {
    pub obs_times: Vec<f64>,
    pub weight: Vec<Vec<DMatrix<f64>>>,
    pub var: Vec<Vec<DMatrix<f64>>>,
}

impl GaussObsModel {
    /// The same per-block (D, Ω) at every observation time.
    pub fn time_invariant(
        obs_times: Vec<f64>,
        weight: Vec<DMatrix<f64>>,
        var: Vec<DMatrix<f64>>,
    ) -> Self {
        let m = obs_times.len();
        GaussObsModel { obs_times, weight: vec![weight; m], var: vec![var; m] }
    }

    pub fn n_obs(&self) -> usize {
        self.obs_times.len()
    }

    pub fn n_vars(&self) -> usize {
        self.weight.first().map_or(0, |w| w.len())
    }

    /// Measurements per variable block.
    pub fn obs_per_var(&self) -> usize {
        self.weight.first().and_then(|w| w.first()).map_or(0, |d| d.nrows())
    }

    pub fn validate(&self, d: usize, q: usize) -> Result<()> {
        if self.weight.len() != self.n_obs() || self.var.len() != self.n_obs() {
            return invalid("observation weights/variances must match the time schedule");
        }
        let s = self.obs_per_var();
        for (i, (wts, vars)) in self.weight.iter().zip(self.var.iter()).enumerate() {
            if wts.len() != d || vars.len() != d {
                return invalid(format!("observation {i} must have {d} blocks"));
            }
            for k in 0..d {
                if wts[k].nrows() != s || wts[k].ncols() != q {
                    return invalid(format!("observation {i} weight block {k} must be {s}x{q}"));
                }
                if vars[k].nrows() != s || vars[k].ncols() != s {
                    return invalid(format!("observation {i} variance block {k} must be {s}x{s}"));
                }
            }
        }
        Ok(())
    }

    /// Weight blocks for time i, merged to a single block-diagonal matrix.
    pub fn merged_weight(&self, i: usize) -> DMatrix<f64> {
        block_diag(&self.weight[i])
    }

    pub fn merged_var(&self, i: usize) -> DMatrix<f64> {
        block_diag(&self.var[i])
    }
}

/// Split a stacked observation vector into per-block pieces of length s.
pub fn split_obs(y: &DVector<f64>, d: usize, s: usize) -> Vec<DVector<f64>> {
    (0..d).map(|k| y.rows(k * s, s).into_owned()).collect()
}

/// Drop masked observation rows (all-zero weight row and zero noise
/// variance): those components are unobserved and contribute the log-density
/// of N(0; 0, 0) = 0, whatever placeholder value the data carries.
pub(crate) fn reduce_obs(
    d_block: &DMatrix<f64>,
    om_block: &DMatrix<f64>,
    y_block: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let active: Vec<usize> = (0..d_block.nrows())
        .filter(|&i| d_block.row(i).iter().any(|x| *x != 0.0) || om_block[(i, i)] != 0.0)
        .collect();
    if active.len() == d_block.nrows() {
        return (d_block.clone(), om_block.clone(), y_block.clone());
    }
    (
        crate::linalg::gather_rows(d_block, &active),
        crate::linalg::gather_mat(om_block, &active, &active),
        crate::linalg::gather_vec(y_block, &active),
    )
}

type LogLikFn = Arc<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type HessFn = Arc<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Generic measurement model with log-density g_i expressed through the
/// observed state components s_{n(i)} = D_i·X_{n(i)}.
///
/// `loglik(i, y_i, s)` returns log p(y_i | s); derivatives in `s` fall back
/// to central finite differences when not supplied. `mask` holds the
/// 0/1 selection blocks D_i (per time, per variable, s×q).
#[derive(Clone)]
pub struct GenObsModel {
    pub obs_times: Vec<f64>,
    pub mask: Vec<Vec<DMatrix<f64>>>,
    pub loglik: LogLikFn,
    pub grad: Option<GradFn>,
    pub hess: Option<HessFn>,
}

impl GenObsModel {
    pub fn n_obs(&self) -> usize {
        self.obs_times.len()
    }

    pub fn obs_per_var(&self) -> usize {
        self.mask.first().and_then(|m| m.first()).map_or(0, |d| d.nrows())
    }

    /// Observed components s = D_i·X stacked across blocks.
    pub fn select(&self, i: usize, state: &DMatrix<f64>) -> DVector<f64> {
        let blocks: Vec<DVector<f64>> = self.mask[i]
            .iter()
            .enumerate()
            .map(|(k, d)| d * state.row(k).transpose())
            .collect();
        stack_vec(&blocks)
    }

    /// log p(y_i | s).
    pub fn loglik_at(&self, i: usize, y: &DVector<f64>, s: &DVector<f64>) -> f64 {
        (self.loglik)(i, y, s)
    }

    /// Gradient of h_i(s) = −log p(y_i | s).
    pub fn h_grad(&self, i: usize, y: &DVector<f64>, s: &DVector<f64>) -> Result<DVector<f64>> {
        if let Some(g) = &self.grad {
            return Ok(-g(i, y, s));
        }
        let f = self.loglik.clone();
        let y = y.clone();
        fd_grad(|v| -f(i, &y, v), s, &FdConfig::default())
    }

    /// Hessian of h_i(s) = −log p(y_i | s), symmetrized.
    pub fn h_hess(&self, i: usize, y: &DVector<f64>, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        if let Some(h) = &self.hess {
            let m = -h(i, y, s);
            return Ok(crate::linalg::symmetrize(&m));
        }
        let f = self.loglik.clone();
        let y = y.clone();
        fd_hess(|v| -f(i, &y, v), s, &FdConfig::hessian_default())
    }
}

/// Either measurement model, for the methods that accept both.
#[derive(Clone)]
pub enum ObsModel {
    Gauss(GaussObsModel),
    General(GenObsModel),
}

impl ObsModel {
    pub fn obs_times(&self) -> &[f64] {
        match self {
            ObsModel::Gauss(g) => &g.obs_times,
            ObsModel::General(g) => &g.obs_times,
        }
    }

    /// log p(y_i | X_{n(i)} = state) for a d×q state in the original layout.
    pub fn loglik_at_state(&self, i: usize, y: &DVector<f64>, state: &DMatrix<f64>) -> Result<f64> {
        match self {
            ObsModel::Gauss(g) => {
                let d = g.n_vars();
                let s = g.obs_per_var();
                if y.len() != d * s {
                    return invalid(format!(
                        "observation {i} has length {}, expected {}",
                        y.len(),
                        d * s
                    ));
                }
                let ys = split_obs(y, d, s);
                let mut ll = 0.0;
                for k in 0..d {
                    let (dk, om, yk) = reduce_obs(&g.weight[i][k], &g.var[i][k], &ys[k]);
                    let mean = &dk * state.row(k).transpose();
                    ll += crate::kalman::mvn_logpdf(&yk, &mean, &om)?;
                }
                Ok(ll)
            }
            ObsModel::General(g) => {
                let s = g.select(i, state);
                let v = g.loglik_at(i, y, &s);
                if v.is_nan() {
                    return numerical(format!("observation log-likelihood {i} returned NaN"));
                }
                Ok(v)
            }
        }
    }
}
