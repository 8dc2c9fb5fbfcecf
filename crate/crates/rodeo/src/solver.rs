//! The probabilistic ODE solver: a forward interrogated Kalman filter over
//! the solution prior, a smoothing pass returning posterior means and
//! variances (`solve_mv`), and a backward sampling pass returning a draw
//! from the solution posterior (`solve_sim`).
//!
//! All recursions run blockwise per system variable. Interrogations with
//! cross-variable terms (tronarp) transparently fall back to a single merged
//! block; `force_dense` selects that path explicitly.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::interrogate::{interrogate, Interrogation, InterrogationMethod};
use crate::kalman::{
    block_predict, block_sample_back, block_smooth, block_update, BlockState, Cov, GaussState,
    KalmanType,
};
use crate::prior::{BlockPrior, OdeProblem};
use crate::rng::RngKey;

/// Solver configuration: grid size, interrogation, covariance representation.
#[derive(Debug, Clone)]
pub struct SolverSpec {
    pub n_steps: usize,
    pub method: InterrogationMethod,
    pub kalman_type: KalmanType,
    pub key: RngKey,
    /// Run the merged single-block path even for blockable interrogations.
    pub force_dense: bool,
}

impl SolverSpec {
    pub fn new(n_steps: usize, method: InterrogationMethod) -> Self {
        SolverSpec {
            n_steps,
            method,
            kalman_type: KalmanType::Standard,
            key: RngKey::new(0),
            force_dense: false,
        }
    }

    pub fn with_key(mut self, key: RngKey) -> Self {
        self.key = key;
        self
    }

    pub fn with_kalman_type(mut self, kind: KalmanType) -> Self {
        self.kalman_type = kind;
        self
    }

    pub fn with_force_dense(mut self, dense: bool) -> Self {
        self.force_dense = dense;
        self
    }
}

/// Everything the forward pass produced, in the layout it ran in
/// (blocked, or merged to a single block).
#[derive(Debug)]
pub struct ForwardPass {
    /// t_0 .. t_N.
    pub times: Vec<f64>,
    /// Filtered states, n = 0..N; index 0 is the degenerate initial state.
    pub filtered: Vec<BlockState>,
    /// Predicted states, n = 1..N (entry i is step i+1's prior).
    pub predicted: Vec<BlockState>,
    /// Interrogations for n = 1..N.
    pub interrogations: Vec<Interrogation>,
    /// Problem weight blocks W, in pass layout.
    pub weight: Vec<DMatrix<f64>>,
    /// Per-block transition matrices of the prior, in pass layout.
    pub trans: Vec<DMatrix<f64>>,
    /// Per-block process noise, in pass layout and covariance representation.
    pub noise: Vec<Cov>,
    /// Whether the pass ran on the merged single-block layout.
    pub merged: bool,
    /// Original number of variables and per-variable state dimension.
    pub n_vars: usize,
    pub state_dim: usize,
}

impl ForwardPass {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Posterior mean and covariance of the solution at every grid point.
pub struct SolutionPosterior {
    pub times: Vec<f64>,
    /// Posterior means in the original d×q layout, one matrix per grid point.
    pub means: Vec<DMatrix<f64>>,
    /// Covariance blocks per grid point: d blocks of q×q on the blocked
    /// path, a single (d·q)×(d·q) block on the merged path.
    pub covs: Vec<Vec<DMatrix<f64>>>,
    pub n_vars: usize,
    pub state_dim: usize,
}

impl SolutionPosterior {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Marginal q×q covariance of variable k at grid point n.
    pub fn block_cov(&self, n: usize, k: usize) -> DMatrix<f64> {
        let q = self.state_dim;
        if self.covs[n].len() == self.n_vars {
            self.covs[n][k].clone()
        } else {
            self.covs[n][0].view((k * q, k * q), (q, q)).into_owned()
        }
    }

    /// Marginal standard deviation of coordinate (k, j) at grid point n.
    pub fn sd(&self, n: usize, k: usize, j: usize) -> f64 {
        let q = self.state_dim;
        let v = if self.covs[n].len() == self.n_vars {
            self.covs[n][k][(j, j)]
        } else {
            self.covs[n][0][(k * q + j, k * q + j)]
        };
        v.max(0.0).sqrt()
    }
}

pub(crate) struct Prepared {
    pub(crate) problem: OdeProblem,
    pub(crate) trans: Vec<DMatrix<f64>>,
    pub(crate) noise: Vec<Cov>,
    pub(crate) dt: f64,
    pub(crate) merged: bool,
    pub(crate) n_vars: usize,
    pub(crate) state_dim: usize,
}

pub(crate) fn prepare(problem: &OdeProblem, prior: &BlockPrior, spec: &SolverSpec) -> Result<Prepared> {
    problem.validate()?;
    if spec.n_steps < 1 {
        return invalid("solver needs n_steps >= 1");
    }
    let d = problem.n_vars();
    let q = problem.state_dim();
    if prior.n_blocks() != d {
        return invalid(format!(
            "prior has {} blocks but the problem has {d} variables",
            prior.n_blocks()
        ));
    }
    if prior.block_dim() != q {
        return invalid(format!(
            "prior blocks are {}-dimensional but the problem state has q = {q}",
            prior.block_dim()
        ));
    }
    let dt = (problem.t_max - problem.t_min) / spec.n_steps as f64;
    if (prior.dt - dt).abs() > 1e-9 * dt.abs().max(1.0) {
        return invalid(format!(
            "prior was discretized at dt = {} but the grid step is {dt}",
            prior.dt
        ));
    }
    if matches!(spec.method, InterrogationMethod::KerstingHennig) {
        return invalid("kersting-hennig interrogation is unimplemented (requires Bayesian quadrature)");
    }
    let merged = spec.force_dense || (!spec.method.is_blockable() && d > 1);
    let (problem, prior_used) = if merged {
        (problem.merged(), prior.merged())
    } else {
        (problem.clone(), prior.clone())
    };
    let noise = prior_used
        .noise
        .iter()
        .map(|r| Cov::from_dense(spec.kalman_type, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        problem,
        trans: prior_used.trans,
        noise,
        dt,
        merged,
        n_vars: d,
        state_dim: q,
    })
}

pub(crate) fn initial_state(problem: &OdeProblem, kind: KalmanType) -> BlockState {
    let q = problem.state_dim();
    let blocks = (0..problem.n_vars())
        .map(|k| {
            GaussState::deterministic(kind, DVector::from_fn(q, |j, _| problem.init[(k, j)]))
        })
        .collect();
    BlockState::new(blocks).expect("validated problem has at least one block")
}

/// Forward pass: predict → interrogate → update with zₙ = 0 at every step.
pub fn solve_forward(
    problem: &OdeProblem,
    prior: &BlockPrior,
    spec: &SolverSpec,
) -> Result<ForwardPass> {
    let prep = prepare(problem, prior, spec)?;
    let n = spec.n_steps;
    let d = prep.problem.n_vars();
    let r = prep.problem.obs_dim();
    let interrogation_key = spec.key.split(0);

    let mut times = Vec::with_capacity(n + 1);
    times.push(prep.problem.t_min);
    let mut filtered = Vec::with_capacity(n + 1);
    let mut predicted = Vec::with_capacity(n);
    let mut interrogations = Vec::with_capacity(n);
    filtered.push(initial_state(&prep.problem, spec.kalman_type));

    let z = vec![DVector::zeros(r); d];
    for step in 1..=n {
        let t = prep.problem.t_min + step as f64 * prep.dt;
        let pred = block_predict(&filtered[step - 1], &prep.trans, &prep.noise)
            .map_err(|e| e.at_step(step))?;
        let inter = interrogate(
            spec.method,
            interrogation_key.split(step as u64),
            &pred,
            &prep.problem,
            t,
        )
        .map_err(|e| e.at_step(step))?;
        let obs_w = inter.obs_weight(&prep.problem.weight);
        let filt = block_update(&pred, &z, &inter.a, &obs_w, &inter.v)
            .map_err(|e| e.at_step(step))?;
        times.push(t);
        predicted.push(pred);
        interrogations.push(inter);
        filtered.push(filt);
    }

    Ok(ForwardPass {
        times,
        filtered,
        predicted,
        interrogations,
        weight: prep.problem.weight.clone(),
        trans: prep.trans,
        noise: prep.noise,
        merged: prep.merged,
        n_vars: prep.n_vars,
        state_dim: prep.state_dim,
    })
}

/// Split a pass-layout mean into the original d×q layout.
pub(crate) fn unmerge_mean(state: &BlockState, n_vars: usize, q: usize) -> DMatrix<f64> {
    if state.n_blocks() == n_vars {
        state.mean_matrix()
    } else {
        let flat = &state.blocks[0].mean;
        DMatrix::from_fn(n_vars, q, |k, j| flat[k * q + j])
    }
}

/// Posterior means and variances via the backward smoothing pass.
pub fn solve_mv(
    problem: &OdeProblem,
    prior: &BlockPrior,
    spec: &SolverSpec,
) -> Result<SolutionPosterior> {
    let fwd = solve_forward(problem, prior, spec)?;
    let n = fwd.n_steps();
    let mut smoothed: Vec<BlockState> = vec![fwd.filtered[n].clone()];
    for step in (0..n).rev() {
        let s = block_smooth(
            &smoothed[smoothed.len() - 1],
            &fwd.filtered[step],
            &fwd.predicted[step],
            &fwd.trans,
            &fwd.noise,
        )
        .map_err(|e| e.at_step(step))?;
        smoothed.push(s);
    }
    smoothed.reverse();
    let means = smoothed.iter().map(|s| unmerge_mean(s, fwd.n_vars, fwd.state_dim)).collect();
    let covs = smoothed
        .iter()
        .map(|s| s.blocks.iter().map(|b| b.cov_dense()).collect())
        .collect();
    Ok(SolutionPosterior {
        times: fwd.times,
        means,
        covs,
        n_vars: fwd.n_vars,
        state_dim: fwd.state_dim,
    })
}

/// A draw from the solution posterior via backward sampling; deterministic
/// in `spec.key`.
pub fn solve_sim(
    problem: &OdeProblem,
    prior: &BlockPrior,
    spec: &SolverSpec,
) -> Result<Vec<DMatrix<f64>>> {
    let fwd = solve_forward(problem, prior, spec)?;
    let n = fwd.n_steps();
    let d = fwd.filtered[0].n_blocks();
    let terminal_key = spec.key.split(1);
    let backward_key = spec.key.split(2);

    let mut draws: Vec<Vec<DVector<f64>>> = Vec::with_capacity(n + 1);
    let last = (0..d)
        .map(|k| fwd.filtered[n].blocks[k].sample(terminal_key.split(k as u64)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_step(n))?;
    draws.push(last);
    for step in (0..n).rev() {
        let x_next = &draws[draws.len() - 1];
        let x = block_sample_back(
            backward_key.split(step as u64),
            x_next,
            &fwd.filtered[step],
            &fwd.predicted[step],
            &fwd.trans,
            &fwd.noise,
        )
        .map_err(|e| e.at_step(step))?;
        draws.push(x);
    }
    draws.reverse();
    let q = fwd.state_dim;
    Ok(draws
        .into_iter()
        .map(|blocks| {
            if blocks.len() == fwd.n_vars {
                DMatrix::from_fn(fwd.n_vars, q, |k, j| blocks[k][j])
            } else {
                DMatrix::from_fn(fwd.n_vars, q, |k, j| blocks[0][k * q + j])
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::ibm_init;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn zero_field_problem(d: usize, q: usize) -> OdeProblem {
        let mut w = DMatrix::zeros(1, q);
        w[(0, 1)] = 1.0;
        OdeProblem {
            weight: vec![w; d],
            init: DMatrix::zeros(d, q),
            t_min: 0.0,
            t_max: 1.0,
            field: Arc::new(move |_x: &DMatrix<f64>, _t| DMatrix::zeros(1, 1) * 0.0),
            jacobian: None,
            params: Default::default(),
        }
    }

    #[test]
    fn zero_field_zero_init_stays_at_zero() {
        let d = 2;
        let q = 3;
        let mut p = zero_field_problem(d, q);
        p.field = Arc::new(move |x: &DMatrix<f64>, _t| DMatrix::zeros(x.nrows(), 1));
        let n = 20;
        let prior = ibm_init(1.0 / n as f64, q, &[0.1, 0.1]).unwrap();
        let spec = SolverSpec::new(n, InterrogationMethod::Schober);
        let fwd = solve_forward(&p, &prior, &spec).unwrap();
        for s in &fwd.filtered {
            for b in &s.blocks {
                assert!(b.mean.amax() < 1e-12);
            }
        }
    }

    #[test]
    fn one_step_smoothing_returns_filtered() {
        let q = 3;
        let mut p = zero_field_problem(1, q);
        p.field = Arc::new(|x: &DMatrix<f64>, _t| {
            DMatrix::from_row_slice(1, 1, &[-x[(0, 0)]])
        });
        p.init[(0, 0)] = 1.0;
        p.init[(0, 1)] = -1.0;
        let prior = ibm_init(1.0, q, &[0.1]).unwrap();
        let spec = SolverSpec::new(1, InterrogationMethod::Schober);
        let fwd = solve_forward(&p, &prior, &spec).unwrap();
        let mv = solve_mv(&p, &prior, &spec).unwrap();
        assert_relative_eq!(
            mv.means[1],
            unmerge_mean(&fwd.filtered[1], 1, q),
            epsilon = 1e-12
        );
        // the initial state is pinned exactly
        assert_eq!(mv.means[0], p.init);
    }

    #[test]
    fn sim_pins_initial_condition_and_is_deterministic() {
        let q = 3;
        let mut p = zero_field_problem(1, q);
        p.field = Arc::new(|x: &DMatrix<f64>, _t| DMatrix::from_row_slice(1, 1, &[-x[(0, 0)]]));
        p.init[(0, 0)] = 1.0;
        p.init[(0, 1)] = -1.0;
        let n = 10;
        let prior = ibm_init(1.0 / n as f64, q, &[0.1]).unwrap();
        let spec =
            SolverSpec::new(n, InterrogationMethod::Schober).with_key(RngKey::new(17));
        let a = solve_sim(&p, &prior, &spec).unwrap();
        let b = solve_sim(&p, &prior, &spec).unwrap();
        assert_eq!(a.len(), n + 1);
        assert_eq!(a[0], p.init);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x, y);
        }
        let c = solve_sim(&p, &prior, &spec.clone().with_key(RngKey::new(18))).unwrap();
        assert_ne!(a[n], c[n]);
    }

    #[test]
    fn dt_mismatch_is_rejected() {
        let p = zero_field_problem(1, 2);
        let prior = ibm_init(0.33, 2, &[0.1]).unwrap();
        let spec = SolverSpec::new(10, InterrogationMethod::Schober);
        assert!(solve_forward(&p, &prior, &spec).is_err());
    }

    #[test]
    fn numerical_failures_carry_the_step_index() {
        let q = 3;
        let mut p = zero_field_problem(1, q);
        // field blows up past t = 0.45
        p.field = Arc::new(|x: &DMatrix<f64>, t: f64| {
            let v = if t > 0.45 { f64::NAN } else { -x[(0, 0)] };
            DMatrix::from_row_slice(1, 1, &[v])
        });
        let n = 10;
        let prior = ibm_init(1.0 / n as f64, q, &[0.1]).unwrap();
        let spec = SolverSpec::new(n, InterrogationMethod::Schober);
        let err = solve_forward(&p, &prior, &spec).unwrap_err();
        assert_eq!(err.step(), Some(5));
    }

    #[test]
    fn tronarp_on_multivariate_problems_merges() {
        let (weights, field) = crate::prior::first_order_pad(
            |x: &DVector<f64>, _t| DVector::from_row_slice(&[-x[0], 0.5 * x[0] - x[1]]),
            2,
            2,
        )
        .unwrap();
        let p = OdeProblem {
            weight: weights,
            init: DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.5]),
            t_min: 0.0,
            t_max: 1.0,
            field,
            jacobian: None,
            params: Default::default(),
        };
        let n = 8;
        let prior = ibm_init(1.0 / n as f64, 2, &[0.1, 0.1]).unwrap();
        let spec = SolverSpec::new(n, InterrogationMethod::Tronarp);
        let fwd = solve_forward(&p, &prior, &spec).unwrap();
        assert!(fwd.merged);
        assert_eq!(fwd.filtered[0].n_blocks(), 1);
        // means still come back in the original layout
        let mv = solve_mv(&p, &prior, &spec).unwrap();
        assert_eq!(mv.means[0].nrows(), 2);
        assert_eq!(mv.means[0].ncols(), 2);
    }
}
