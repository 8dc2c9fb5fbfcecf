//! Dense joint-Gaussian oracle for linear-Gaussian chains, built from first
//! principles (stacked covariances, explicit inverses) and independent of
//! the Kalman recursions it checks.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rodeo::linalg::LN_2PI;
use rodeo::prior::{BlockPrior, OdeProblem};
use rodeo::rng::RngKey;
use std::collections::BTreeMap;
use std::sync::Arc;

/// X_0 = x0 fixed; X_n = Q X_{n-1} + c + w_n, w_n ~ N(0, R), n = 1..N.
pub struct DenseChain {
    pub x0: DVector<f64>,
    pub trans: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub noise: DMatrix<f64>,
    pub n_steps: usize,
}

/// A linear observation H·X_{step} + a + N(0, V) carrying its value.
pub struct DenseObs {
    pub step: usize,
    pub h: DMatrix<f64>,
    pub a: DVector<f64>,
    pub v: DMatrix<f64>,
    pub value: DVector<f64>,
}

pub struct DenseJoint {
    pub p: usize,
    pub n: usize,
    /// stacked mean of (X_1, ..., X_N)
    pub mean: DVector<f64>,
    /// stacked covariance of (X_1, ..., X_N)
    pub cov: DMatrix<f64>,
}

impl DenseChain {
    pub fn joint(&self) -> DenseJoint {
        let p = self.x0.len();
        let n = self.n_steps;
        // marginal means and covariances
        let mut means = Vec::with_capacity(n + 1);
        let mut margs = Vec::with_capacity(n + 1);
        means.push(self.x0.clone());
        margs.push(DMatrix::zeros(p, p));
        for k in 1..=n {
            means.push(&self.trans * &means[k - 1] + &self.drift);
            margs.push(&self.trans * &margs[k - 1] * self.trans.transpose() + &self.noise);
        }
        let mut mean = DVector::zeros(n * p);
        let mut cov = DMatrix::zeros(n * p, n * p);
        for m in 1..=n {
            mean.rows_mut((m - 1) * p, p).copy_from(&means[m]);
            // cov(X_m, X_j) = Sigma_m (Q^{j-m})' for j >= m
            let mut cross = margs[m].clone();
            for j in m..=n {
                cov.view_mut(((m - 1) * p, (j - 1) * p), (p, p)).copy_from(&cross);
                if j > m {
                    let t = cross.transpose();
                    cov.view_mut(((j - 1) * p, (m - 1) * p), (p, p)).copy_from(&t);
                }
                cross = &cross * self.trans.transpose();
            }
        }
        // fix ordering: the loop above wrote cross for (m, j) before transposing;
        // rebuild symmetric lower triangle explicitly
        for m in 1..=n {
            for j in 1..m {
                let b = cov.view(((j - 1) * p, (m - 1) * p), (p, p)).transpose();
                cov.view_mut(((m - 1) * p, (j - 1) * p), (p, p)).copy_from(&b);
            }
        }
        DenseJoint { p, n, mean, cov }
    }
}

fn dense_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    // explicit-inverse path, deliberately different from the library's
    let lu = cov.clone().lu();
    let det: f64 = lu.determinant();
    let inv = lu.try_inverse().expect("oracle covariance is singular");
    let r = x - mean;
    -0.5 * (x.len() as f64 * LN_2PI + det.ln() + (r.transpose() * inv * r)[(0, 0)])
}

pub struct DenseConditional {
    /// conditional mean of the stacked states (X_1..X_N)
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// log-density of the observation stack at its given values
    pub obs_logpdf: f64,
    pub p: usize,
}

impl DenseConditional {
    pub fn state_mean(&self, step: usize) -> DVector<f64> {
        assert!(step >= 1);
        self.mean.rows((step - 1) * self.p, self.p).into_owned()
    }

    pub fn state_cov(&self, step: usize) -> DMatrix<f64> {
        assert!(step >= 1);
        self.cov.view(((step - 1) * self.p, (step - 1) * self.p), (self.p, self.p)).into_owned()
    }
}

/// Condition the chain on a set of linear observations (all steps >= 1) and
/// evaluate the observation log-density at the given values.
pub fn dense_condition(chain: &DenseChain, obs: &[DenseObs]) -> DenseConditional {
    let joint = chain.joint();
    let p = joint.p;
    let total_r: usize = obs.iter().map(|o| o.h.nrows()).sum();
    let mut h = DMatrix::zeros(total_r, joint.n * p);
    let mut a = DVector::zeros(total_r);
    let mut v = DMatrix::zeros(total_r, total_r);
    let mut vals = DVector::zeros(total_r);
    let mut row = 0;
    for o in obs {
        assert!(o.step >= 1 && o.step <= joint.n, "observation step out of range");
        let r = o.h.nrows();
        h.view_mut((row, (o.step - 1) * p), (r, p)).copy_from(&o.h);
        a.rows_mut(row, r).copy_from(&o.a);
        v.view_mut((row, row), (r, r)).copy_from(&o.v);
        vals.rows_mut(row, r).copy_from(&o.value);
        row += r;
    }
    if total_r == 0 {
        return DenseConditional { mean: joint.mean, cov: joint.cov, obs_logpdf: 0.0, p };
    }
    let mean_o = &h * &joint.mean + &a;
    let cov_oo = &h * &joint.cov * h.transpose() + &v;
    let cross = &joint.cov * h.transpose();
    let obs_logpdf = dense_logpdf(&vals, &mean_o, &cov_oo);
    let inv = cov_oo.clone().try_inverse().expect("oracle innovation is singular");
    let mean = &joint.mean + &cross * &inv * (&vals - &mean_o);
    let cov = &joint.cov - &cross * &inv * cross.transpose();
    DenseConditional { mean, cov, obs_logpdf, p }
}

/// A randomly generated affine ODE-IVP in blocked first-order form:
/// f(X) = G·vec(X) + c0 with a block-major flattening, plus its prior.
pub struct LinearInstance {
    pub problem: OdeProblem,
    pub prior: BlockPrior,
    pub g: DMatrix<f64>,
    pub c0: DVector<f64>,
    pub d: usize,
    pub q: usize,
}

/// Build a random affine problem; `coupled` controls whether G has
/// cross-variable entries (coupled systems need the dense/tronarp path).
pub fn random_linear_instance(seed: u64, d: usize, q: usize, coupled: bool, t_max: f64, n_steps: usize) -> LinearInstance {
    let key = RngKey::new(seed ^ 0x51ce_ba5e);
    let mut g = DMatrix::zeros(d, d * q);
    let raw = key.split(0).normal_matrix(d, d * q);
    for k in 0..d {
        for kk in 0..d {
            if !coupled && kk != k {
                continue;
            }
            // the field reads value coordinates only, scaled to keep the
            // system mildly stable
            g[(k, kk * q)] = 0.6 * raw[(k, kk * q)] - if kk == k { 0.4 } else { 0.0 };
        }
    }
    let c0 = key.split(1).normal_vector(d) * 0.5;
    let init_vals = key.split(2).normal_vector(d);

    let mut w = DMatrix::zeros(1, q);
    w[(0, 1)] = 1.0;
    let gg = g.clone();
    let cc = c0.clone();
    let field = Arc::new(move |x: &DMatrix<f64>, _t: f64| {
        let flat = DVector::from_fn(x.nrows() * x.ncols(), |i, _| x[(i / x.ncols(), i % x.ncols())]);
        let f = &gg * flat + &cc;
        DMatrix::from_fn(x.nrows(), 1, |k, _| f[k])
    });
    let mut init = DMatrix::zeros(d, q);
    for k in 0..d {
        init[(k, 0)] = init_vals[k];
    }
    // first derivative from the field itself
    let f0 = field(&init, 0.0);
    for k in 0..d {
        init[(k, 1)] = f0[(k, 0)];
    }
    let problem = OdeProblem {
        weight: vec![w; d],
        init,
        t_min: 0.0,
        t_max,
        field,
        jacobian: None,
        params: BTreeMap::new(),
    };
    let sigma: Vec<f64> = (0..d).map(|k| 0.2 + 0.3 * key.split(100 + k as u64).uniform()).collect();
    let prior = rodeo::prior::ibm_init(t_max / n_steps as f64, q, &sigma).unwrap();
    LinearInstance { problem, prior, g, c0, d, q }
}

impl LinearInstance {
    /// The solver's surrogate observation under tronarp/kramer linearization
    /// of an affine field: H = W_dense − G, a = −c0, V = 0.
    pub fn constraint_obs(&self, n_steps: usize) -> Vec<DenseObs> {
        let w_dense = rodeo::linalg::block_diag(&self.problem.weight);
        let h = &w_dense - &self.g;
        (1..=n_steps)
            .map(|step| DenseObs {
                step,
                h: h.clone(),
                a: -self.c0.clone(),
                v: DMatrix::zeros(self.d, self.d),
                value: DVector::zeros(self.d),
            })
            .collect()
    }

    /// The dense chain of the merged prior.
    pub fn chain(&self, n_steps: usize) -> DenseChain {
        let (q_dense, r_dense) = rodeo::prior::indep_init(&self.prior.trans, &self.prior.noise);
        let p = self.d * self.q;
        DenseChain {
            x0: DVector::from_fn(p, |i, _| self.problem.init[(i / self.q, i % self.q)]),
            trans: q_dense,
            drift: DVector::zeros(p),
            noise: r_dense,
            n_steps,
        }
    }
}

/// Effective sample size via Geyer's initial positive sequence, for MC
/// standard errors of autocorrelated chains.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 10 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return 1.0;
    }
    let acf = |lag: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..(n - lag) {
            s += (x[i] - mean) * (x[i + lag] - mean);
        }
        s / (n as f64 * var)
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n / 2 {
        let pair = acf(lag) + acf(lag + 1);
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau).max(1.0)
}

/// Two-sided Kolmogorov–Smirnov distance against the standard normal CDF.
pub fn ks_distance_std_normal(draws: &[f64]) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let phi = |z: f64| 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
    let mut d = 0.0f64;
    for (i, &z) in sorted.iter().enumerate() {
        let cdf = phi(z);
        d = d.max((cdf - i as f64 / n).abs());
        d = d.max(((i as f64 + 1.0) / n - cdf).abs());
    }
    d
}

/// Abramowitz–Stegun 7.1.26 rational approximation (|error| < 1.5e-7).
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}
