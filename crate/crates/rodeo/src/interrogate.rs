//! Model interrogations: per-step linearizations (aₙ, Bₙ, Vₙ) turning the
//! ODE constraint zₙ = W·Xₙ − f(Xₙ, tₙ) into a Gaussian observation of the
//! surrogate state-space model.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numerical, Result};
use crate::kalman::BlockState;
use crate::numdiff::{fd_jac, FdConfig};
use crate::prior::{OdeProblem, StateFn};
use crate::rng::RngKey;

/// Interrogation method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterrogationMethod {
    /// aₙ = −f(μ), B = 0, V = 0. Fast, deterministic; no noise inflation,
    /// which is known to degrade the solution posterior at coarse grids.
    Schober,
    /// aₙ = −f(x*), x* drawn from the predictive Gaussian; V = WΣWᵀ.
    Chkrebtii,
    /// First-order linearization with the full Jacobian; cross-variable
    /// terms force the dense (single-block) solver path.
    Tronarp,
    /// Tronarp with the Jacobian truncated to its block diagonal, keeping
    /// the blocked solver applicable.
    Kramer,
    /// Reserved: requires Bayesian quadrature; not implemented.
    KerstingHennig,
}

impl InterrogationMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "schober" => Ok(Self::Schober),
            "chkrebtii" => Ok(Self::Chkrebtii),
            "tronarp" => Ok(Self::Tronarp),
            "kramer" => Ok(Self::Kramer),
            "kersting-hennig" | "kersting" => Ok(Self::KerstingHennig),
            other => invalid(format!(
                "unknown interrogation '{other}' (expected schober|chkrebtii|tronarp|kramer)"
            )),
        }
    }

    /// Whether the method keeps per-variable blocking intact.
    pub fn is_blockable(self) -> bool {
        !matches!(self, InterrogationMethod::Tronarp)
    }

    /// Whether interrogation output depends on the RNG key.
    pub fn is_stochastic(self) -> bool {
        matches!(self, InterrogationMethod::Chkrebtii)
    }
}

/// The linearization triplet, stored per variable block.
#[derive(Debug, Clone)]
pub struct Interrogation {
    pub a: Vec<DVector<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
}

impl Interrogation {
    pub fn n_blocks(&self) -> usize {
        self.a.len()
    }

    /// Observation matrices W + B per block.
    pub fn obs_weight(&self, weight: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        weight.iter().zip(self.b.iter()).map(|(w, b)| w + b).collect()
    }
}

fn eval_field(field: &StateFn, x: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let f = field(x, t);
    if f.iter().any(|v| !v.is_finite()) {
        return numerical(format!("vector field returned non-finite values at t = {t}"));
    }
    Ok(f)
}

fn zero_blocks(d: usize, rows: usize, cols: usize) -> Vec<DMatrix<f64>> {
    vec![DMatrix::zeros(rows, cols); d]
}

/// aₙ = −f(μ_pred, t), B = 0, V = 0.
pub fn interrogate_schober(
    state_pred: &BlockState,
    problem: &OdeProblem,
    t: f64,
) -> Result<Interrogation> {
    let d = problem.n_vars();
    let q = problem.state_dim();
    let r = problem.obs_dim();
    let mu = state_pred.mean_matrix();
    let f = eval_field(&problem.field, &mu, t)?;
    let a = (0..d).map(|k| -f.row(k).transpose()).collect();
    Ok(Interrogation { a, b: zero_blocks(d, r, q), v: zero_blocks(d, r, r) })
}

/// aₙ = −f(x*, t) with x* ~ N(μ_pred, Σ_pred) per block; V = W·Σ_pred·Wᵀ.
pub fn interrogate_chkrebtii(
    key: RngKey,
    state_pred: &BlockState,
    problem: &OdeProblem,
    t: f64,
) -> Result<Interrogation> {
    let d = problem.n_vars();
    let q = problem.state_dim();
    let r = problem.obs_dim();
    let mut xstar = DMatrix::zeros(d, q);
    for k in 0..d {
        let draw = state_pred.blocks[k].sample(key.split(k as u64))?;
        for j in 0..q {
            xstar[(k, j)] = draw[j];
        }
    }
    let f = eval_field(&problem.field, &xstar, t)?;
    let a = (0..d).map(|k| -f.row(k).transpose()).collect();
    let v = (0..d)
        .map(|k| {
            let w = &problem.weight[k];
            crate::linalg::symmetrize(&(w * state_pred.blocks[k].cov_dense() * w.transpose()))
        })
        .collect();
    Ok(Interrogation { a, b: zero_blocks(d, r, q), v })
}

/// Full Jacobian of the field at the blocked state, analytic when available,
/// otherwise by central finite differences on the flattened state.
fn full_jacobian(problem: &OdeProblem, mu: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let d = problem.n_vars();
    let q = problem.state_dim();
    let r = problem.obs_dim();
    if let Some(jac) = &problem.jacobian {
        let j = jac(mu, t);
        if j.nrows() != d * r || j.ncols() != d * q {
            return invalid(format!(
                "analytic jacobian must be {}x{}, got {}x{}",
                d * r,
                d * q,
                j.nrows(),
                j.ncols()
            ));
        }
        return Ok(j);
    }
    let field = problem.field.clone();
    let flat = DVector::from_fn(d * q, |i, _| mu[(i / q, i % q)]);
    fd_jac(
        |x: &DVector<f64>| {
            let xs = DMatrix::from_fn(d, q, |k, j| x[k * q + j]);
            let f = field(&xs, t);
            DVector::from_fn(d * r, |i, _| f[(i / r, i % r)])
        },
        &flat,
        &FdConfig::default(),
    )
}

/// aₙ = −f(μ) + J·μ, B = −J with the full Jacobian. Off-diagonal blocks are
/// spread across the block list only when d = 1 (merged state); for d > 1
/// callers must merge first.
pub fn interrogate_tronarp(
    state_pred: &BlockState,
    problem: &OdeProblem,
    t: f64,
) -> Result<Interrogation> {
    let d = problem.n_vars();
    if d != 1 {
        return invalid(
            "tronarp interrogation has cross-variable terms; merge the problem into a single dense block first",
        );
    }
    let q = problem.state_dim();
    let r = problem.obs_dim();
    let mu = state_pred.mean_matrix();
    let f = eval_field(&problem.field, &mu, t)?;
    let j = full_jacobian(problem, &mu, t)?;
    let mu_vec = DVector::from_fn(q, |i, _| mu[(0, i)]);
    let a = vec![-f.row(0).transpose() + &j * mu_vec];
    Ok(Interrogation { a, b: vec![-j], v: zero_blocks(1, r, r) })
}

/// As tronarp, but B keeps only the block-diagonal Jacobian slices
/// ∂f_k/∂X_k, preserving the blocked layout exactly.
pub fn interrogate_kramer(
    state_pred: &BlockState,
    problem: &OdeProblem,
    t: f64,
) -> Result<Interrogation> {
    let d = problem.n_vars();
    let q = problem.state_dim();
    let r = problem.obs_dim();
    let mu = state_pred.mean_matrix();
    let f = eval_field(&problem.field, &mu, t)?;
    let j = full_jacobian(problem, &mu, t)?;
    let mut a = Vec::with_capacity(d);
    let mut b = Vec::with_capacity(d);
    for k in 0..d {
        let jk = j.view((k * r, k * q), (r, q)).into_owned();
        let muk = DVector::from_fn(q, |i, _| mu[(k, i)]);
        a.push(-f.row(k).transpose() + &jk * muk);
        b.push(-jk);
    }
    Ok(Interrogation { a, b, v: zero_blocks(d, r, r) })
}

/// Dispatch on the method tag. `key` is consumed only by stochastic methods.
pub fn interrogate(
    method: InterrogationMethod,
    key: RngKey,
    state_pred: &BlockState,
    problem: &OdeProblem,
    t: f64,
) -> Result<Interrogation> {
    match method {
        InterrogationMethod::Schober => interrogate_schober(state_pred, problem, t),
        InterrogationMethod::Chkrebtii => interrogate_chkrebtii(key, state_pred, problem, t),
        InterrogationMethod::Tronarp => interrogate_tronarp(state_pred, problem, t),
        InterrogationMethod::Kramer => interrogate_kramer(state_pred, problem, t),
        InterrogationMethod::KerstingHennig => Err(crate::error::Error::Invalid(
            "kersting-hennig interrogation is unimplemented (requires Bayesian quadrature)".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::{BlockState, Cov, GaussState};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn block_state(means: &[DVector<f64>], covs: &[DMatrix<f64>]) -> BlockState {
        BlockState::new(
            means
                .iter()
                .zip(covs.iter())
                .map(|(m, c)| GaussState::new(m.clone(), Cov::Full(c.clone())).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn chkrebtii_problem() -> OdeProblem {
        // x'' = sin(2t) - x on a 4-dimensional block
        let mut w = DMatrix::zeros(1, 4);
        w[(0, 2)] = 1.0;
        OdeProblem {
            weight: vec![w],
            init: DMatrix::from_row_slice(1, 4, &[-1.0, 0.0, 1.0, 0.0]),
            t_min: 0.0,
            t_max: 10.0,
            field: Arc::new(|x: &DMatrix<f64>, t: f64| {
                DMatrix::from_row_slice(1, 1, &[(2.0 * t).sin() - x[(0, 0)]])
            }),
            jacobian: None,
            params: Default::default(),
        }
    }

    #[test]
    fn schober_zero_field_gives_zeros() {
        let mut p = chkrebtii_problem();
        p.field = Arc::new(|_x: &DMatrix<f64>, _t| DMatrix::zeros(1, 1));
        let s = block_state(&[DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0])], &[DMatrix::zeros(4, 4)]);
        let i = interrogate_schober(&s, &p, 0.3).unwrap();
        assert_eq!(i.a[0], DVector::zeros(1));
        assert_eq!(i.b[0], DMatrix::zeros(1, 4));
        assert_eq!(i.v[0], DMatrix::zeros(1, 1));
    }

    #[test]
    fn schober_evaluates_minus_f_at_predicted_mean() {
        let p = chkrebtii_problem();
        let s = block_state(&[DVector::from_row_slice(&[-1.0, 0.0, 1.0, 0.0])], &[DMatrix::zeros(4, 4)]);
        let i = interrogate_schober(&s, &p, 0.0).unwrap();
        // f = sin(0) - (-1) = 1, a = -f = -1
        assert_relative_eq!(i.a[0][0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn chkrebtii_degenerate_draw_matches_schober() {
        let p = chkrebtii_problem();
        let s = block_state(&[DVector::from_row_slice(&[0.5, 0.0, 0.0, 0.0])], &[DMatrix::zeros(4, 4)]);
        let c = interrogate_chkrebtii(RngKey::new(0), &s, &p, 1.0).unwrap();
        let sch = interrogate_schober(&s, &p, 1.0).unwrap();
        assert_eq!(c.a[0], sch.a[0]);
        assert_eq!(c.v[0], DMatrix::zeros(1, 1));
    }

    #[test]
    fn chkrebtii_reproducible_and_key_sensitive() {
        let p = chkrebtii_problem();
        let cov = DMatrix::identity(4, 4) * 0.5;
        let s = block_state(&[DVector::zeros(4)], &[cov]);
        let a = interrogate_chkrebtii(RngKey::new(5), &s, &p, 0.2).unwrap();
        let b = interrogate_chkrebtii(RngKey::new(5), &s, &p, 0.2).unwrap();
        let c = interrogate_chkrebtii(RngKey::new(6), &s, &p, 0.2).unwrap();
        assert_eq!(a.a[0], b.a[0]);
        assert_ne!(a.a[0], c.a[0]);
    }

    #[test]
    fn chkrebtii_noise_is_the_selected_variance() {
        // W = [0,1,0]: V must equal Sigma[1,1]
        let mut w = DMatrix::zeros(1, 3);
        w[(0, 1)] = 1.0;
        let p = OdeProblem {
            weight: vec![w],
            init: DMatrix::zeros(1, 3),
            t_min: 0.0,
            t_max: 1.0,
            field: Arc::new(|_x: &DMatrix<f64>, _t| DMatrix::zeros(1, 1)),
            jacobian: None,
            params: Default::default(),
        };
        let mut cov = DMatrix::zeros(3, 3);
        cov[(0, 0)] = 2.0;
        cov[(1, 1)] = 7.0;
        cov[(2, 2)] = 3.0;
        let s = block_state(&[DVector::zeros(3)], &[cov]);
        let i = interrogate_chkrebtii(RngKey::new(1), &s, &p, 0.0).unwrap();
        assert_relative_eq!(i.v[0][(0, 0)], 7.0, epsilon = 1e-14);
    }

    #[test]
    fn tronarp_is_exact_for_linear_fields() {
        // f(X) = Lambda x with x the value column; check W X - f(X) = (W+B)X + a identically
        let lambda = -0.8;
        let mut w = DMatrix::zeros(1, 2);
        w[(0, 1)] = 1.0;
        let p = OdeProblem {
            weight: vec![w.clone()],
            init: DMatrix::zeros(1, 2),
            t_min: 0.0,
            t_max: 1.0,
            field: Arc::new(move |x: &DMatrix<f64>, _t| {
                DMatrix::from_row_slice(1, 1, &[lambda * x[(0, 0)]])
            }),
            jacobian: None,
            params: Default::default(),
        };
        let s = block_state(
            &[DVector::from_row_slice(&[0.7, -0.3])],
            &[DMatrix::identity(2, 2)],
        );
        let i = interrogate_tronarp(&s, &p, 0.0).unwrap();
        for seed in 0..5u64 {
            let x = RngKey::new(seed).normal_vector(2);
            let true_constraint = (&w * &x)[0] - lambda * x[0];
            let surrogate = ((&w + &i.b[0]) * &x)[0] + i.a[0][0];
            assert_relative_eq!(true_constraint, surrogate, epsilon = 1e-6);
        }
    }

    #[test]
    fn tronarp_scalar_square_field() {
        // f(x) = x^2 at mu = 3: a = 9, B = -6 (on the value coordinate)
        let w = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let p = OdeProblem {
            weight: vec![w],
            init: DMatrix::zeros(1, 2),
            t_min: 0.0,
            t_max: 1.0,
            field: Arc::new(|x: &DMatrix<f64>, _t| {
                DMatrix::from_row_slice(1, 1, &[x[(0, 0)] * x[(0, 0)]])
            }),
            jacobian: None,
            params: Default::default(),
        };
        let s = block_state(&[DVector::from_row_slice(&[3.0, 0.0])], &[DMatrix::zeros(2, 2)]);
        let i = interrogate_tronarp(&s, &p, 0.0).unwrap();
        assert_relative_eq!(i.a[0][0], 9.0, epsilon = 1e-6);
        assert_relative_eq!(i.b[0][(0, 0)], -6.0, epsilon = 1e-6);
        assert_relative_eq!(i.b[0][(0, 1)], 0.0, epsilon = 1e-9);
    }

    fn fitz_problem(a: f64, b: f64, c: f64) -> OdeProblem {
        let (weights, field) = crate::prior::first_order_pad(
            move |x: &DVector<f64>, _t| {
                let (v, r) = (x[0], x[1]);
                DVector::from_row_slice(&[c * (v - v * v * v / 3.0 + r), -(v - a + b * r) / c])
            },
            2,
            3,
        )
        .unwrap();
        OdeProblem {
            weight: weights,
            init: DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            t_min: 0.0,
            t_max: 40.0,
            field,
            jacobian: None,
            params: Default::default(),
        }
    }

    #[test]
    fn kramer_keeps_block_diagonal_jacobian_slices() {
        let (a, b, c) = (0.2, 0.2, 3.0);
        let p = fitz_problem(a, b, c);
        let mu_v = 0.4;
        let mu_r = -0.9;
        let s = block_state(
            &[
                DVector::from_row_slice(&[mu_v, 0.0, 0.0]),
                DVector::from_row_slice(&[mu_r, 0.0, 0.0]),
            ],
            &[DMatrix::zeros(3, 3), DMatrix::zeros(3, 3)],
        );
        let i = interrogate_kramer(&s, &p, 0.0).unwrap();
        // hand Jacobian: dV'/dV = c(1 - V^2), dR'/dR = -b/c
        assert_relative_eq!(i.b[0][(0, 0)], -(c * (1.0 - mu_v * mu_v)), epsilon = 1e-5);
        assert_relative_eq!(i.b[1][(0, 0)], b / c, epsilon = 1e-6);
        // derivative columns never enter the field
        assert_relative_eq!(i.b[0][(0, 1)], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn kramer_equals_tronarp_for_single_block() {
        let p = chkrebtii_problem();
        let s = block_state(
            &[DVector::from_row_slice(&[0.3, 0.1, -0.2, 0.0])],
            &[DMatrix::identity(4, 4)],
        );
        let kr = interrogate_kramer(&s, &p, 0.7).unwrap();
        let tr = interrogate_tronarp(&s, &p, 0.7).unwrap();
        assert_relative_eq!(kr.a[0], tr.a[0], epsilon = 1e-12);
        assert_relative_eq!(kr.b[0], tr.b[0], epsilon = 1e-12);
    }

    #[test]
    fn kramer_equals_tronarp_for_decoupled_systems() {
        // two decoupled linear variables: the full Jacobian is already block diagonal
        let (weights, field) = crate::prior::first_order_pad(
            |x: &DVector<f64>, _t| DVector::from_row_slice(&[-0.5 * x[0], 2.0 * x[1]]),
            2,
            2,
        )
        .unwrap();
        let p = OdeProblem {
            weight: weights,
            init: DMatrix::zeros(2, 2),
            t_min: 0.0,
            t_max: 1.0,
            field,
            jacobian: None,
            params: Default::default(),
        };
        let s = block_state(
            &[DVector::from_row_slice(&[1.0, 0.0]), DVector::from_row_slice(&[-2.0, 0.0])],
            &[DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)],
        );
        let kr = interrogate_kramer(&s, &p, 0.0).unwrap();
        let merged = p.merged();
        let sm = block_state(
            &[DVector::from_row_slice(&[1.0, 0.0, -2.0, 0.0])],
            &[DMatrix::zeros(4, 4)],
        );
        let tr = interrogate_tronarp(&sm, &merged, 0.0).unwrap();
        for k in 0..2 {
            assert_relative_eq!(kr.a[k][0], tr.a[0][k], epsilon = 1e-9);
            for j in 0..2 {
                assert_relative_eq!(kr.b[k][(0, j)], tr.b[0][(k, k * 2 + j)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn analytic_jacobian_agrees_with_finite_differences() {
        let (a, b, c) = (0.2, 0.2, 3.0);
        let mut p = fitz_problem(a, b, c);
        let q = 3;
        p.jacobian = Some(Arc::new(move |x: &DMatrix<f64>, _t| {
            let v = x[(0, 0)];
            let mut j = DMatrix::zeros(2, 2 * q);
            j[(0, 0)] = c * (1.0 - v * v);
            j[(0, q)] = c;
            j[(1, 0)] = -1.0 / c;
            j[(1, q)] = -b / c;
            j
        }));
        let mu = DMatrix::from_row_slice(2, 3, &[0.4, 0.0, 0.0, -0.9, 0.0, 0.0]);
        let analytic = full_jacobian(&p, &mu, 0.0).unwrap();
        p.jacobian = None;
        let fd = full_jacobian(&p, &mu, 0.0).unwrap();
        assert_relative_eq!(analytic, fd, epsilon = 1e-6);
    }

    #[test]
    fn kersting_hennig_is_reserved() {
        let p = chkrebtii_problem();
        let s = block_state(&[DVector::zeros(4)], &[DMatrix::zeros(4, 4)]);
        let e = interrogate(InterrogationMethod::KerstingHennig, RngKey::new(0), &s, &p, 0.0);
        assert!(e.unwrap_err().to_string().contains("unimplemented"));
    }

    #[test]
    fn non_finite_field_is_a_numerical_error() {
        let mut p = chkrebtii_problem();
        p.field = Arc::new(|_x: &DMatrix<f64>, _t| DMatrix::from_row_slice(1, 1, &[f64::NAN]));
        let s = block_state(&[DVector::zeros(4)], &[DMatrix::zeros(4, 4)]);
        assert!(interrogate_schober(&s, &p, 0.0).is_err());
    }
}
