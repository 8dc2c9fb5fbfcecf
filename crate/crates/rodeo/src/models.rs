//! Built-in benchmark models: a second-order oscillator with a closed-form
//! solution, the FitzHugh–Nagumo neuron model, the log-scale Hes1 oscillator
//! with partially observed components, and the SEIRAH epidemic model with
//! Poisson count observations. Each model packages its vector field,
//! analytic Jacobian, parameter transform, priors, observation schedule, and
//! data simulator.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{invalid, Result};
use crate::inference::{GaussObsModel, GenObsModel, ObsModel};
use crate::prior::{first_order_pad, ibm_init, BlockPrior, OdeProblem};
use crate::rng::RngKey;
use crate::solver::{solve_mv, SolverSpec};
use crate::interrogate::InterrogationMethod;

/// Registry of built-in models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    Chkrebtii,
    Fitz,
    Hes1,
    Seirah,
}

pub const ALL_MODELS: [ModelId; 4] = [ModelId::Chkrebtii, ModelId::Fitz, ModelId::Hes1, ModelId::Seirah];

/// x(t) = (2 sin t − 3 cos t − sin 2t)/3, the exact solution of the
/// second-order test equation x″ = sin(2t) − x with x(0) = −1, x′(0) = 0.
pub fn closed_form_chkrebtii(t: f64) -> f64 {
    (2.0 * t.sin() - 3.0 * t.cos() - (2.0 * t).sin()) / 3.0
}

fn ln_factorial(y: f64) -> f64 {
    let n = y.round().max(0.0);
    if n < 32.0 {
        return (2..=n as u64).map(|k| (k as f64).ln()).sum();
    }
    // Stirling series
    let x = n + 1.0;
    let inv = 1.0 / x;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv / 12.0
        - inv.powi(3) / 360.0
        + inv.powi(5) / 1260.0
}

fn poisson_logpmf(y: f64, rate: f64) -> f64 {
    let lam = rate.max(1e-300);
    y * lam.ln() - lam - ln_factorial(y)
}

impl ModelId {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "chkrebtii" => Ok(ModelId::Chkrebtii),
            "fitz" | "fitzhugh-nagumo" | "fn" => Ok(ModelId::Fitz),
            "hes1" => Ok(ModelId::Hes1),
            "seirah" => Ok(ModelId::Seirah),
            other => invalid(format!(
                "unknown model '{other}'; available models: chkrebtii, fitz, hes1, seirah"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Chkrebtii => "chkrebtii",
            ModelId::Fitz => "fitz",
            ModelId::Hes1 => "hes1",
            ModelId::Seirah => "seirah",
        }
    }

    /// (number of variables d, padded state dimension q).
    pub fn dims(self) -> (usize, usize) {
        match self {
            ModelId::Chkrebtii => (1, 4),
            ModelId::Fitz => (2, 3),
            ModelId::Hes1 => (3, 3),
            ModelId::Seirah => (6, 3),
        }
    }

    pub fn window(self) -> (f64, f64) {
        match self {
            ModelId::Chkrebtii => (0.0, 10.0),
            ModelId::Fitz => (0.0, 40.0),
            // minutes over a four-hour period
            ModelId::Hes1 => (0.0, 240.0),
            // days
            ModelId::Seirah => (0.0, 60.0),
        }
    }

    /// Natural-scale parameter names.
    pub fn theta_names(self) -> Vec<&'static str> {
        match self {
            ModelId::Chkrebtii => vec![],
            ModelId::Fitz => vec!["a", "b", "c", "V0", "R0"],
            ModelId::Hes1 => vec!["a", "b", "c", "d", "e", "f", "g", "P0", "M0", "H0"],
            ModelId::Seirah => vec!["b", "r", "alpha", "D_e", "D_I", "D_q", "E0", "I0"],
        }
    }

    /// True parameter values used for simulation.
    pub fn true_theta(self) -> DVector<f64> {
        match self {
            ModelId::Chkrebtii => DVector::zeros(0),
            ModelId::Fitz => DVector::from_row_slice(&[0.2, 0.2, 3.0, -1.0, 1.0]),
            ModelId::Hes1 => DVector::from_row_slice(&[
                0.022, 0.3, 0.031, 0.028, 0.5, 20.0, 0.3, 1.439, 2.037, 17.904,
            ]),
            ModelId::Seirah => {
                DVector::from_row_slice(&[2.23, 0.034, 0.55, 5.1, 2.3, 1.13, 15492.0, 21752.0])
            }
        }
    }

    /// Measurement noise scale, where the model has one.
    pub fn phi(self) -> f64 {
        match self {
            ModelId::Fitz => 0.2,
            ModelId::Hes1 => 0.15,
            _ => 0.0,
        }
    }

    /// Default prior scale σ per variable.
    pub fn default_sigma(self) -> f64 {
        match self {
            ModelId::Seirah => 100.0,
            _ => 0.1,
        }
    }

    /// Number of prior-scale coordinates appended to the unconstrained
    /// parameter vector (inferred σ's); models with fixed σ append none.
    pub fn eta_dim(self) -> usize {
        match self {
            ModelId::Fitz => 2,
            _ => 0,
        }
    }

    /// Which natural parameters live on the log scale.
    fn log_scale(self) -> Vec<bool> {
        match self {
            ModelId::Chkrebtii => vec![],
            // a, b, c positive; the initial values are unconstrained
            ModelId::Fitz => vec![true, true, true, false, false],
            _ => vec![true; self.theta_names().len()],
        }
    }

    /// Names of the unconstrained coordinates (CSV headers, draw columns).
    pub fn unconstrained_names(self) -> Vec<String> {
        let mut names: Vec<String> = self
            .theta_names()
            .iter()
            .zip(self.log_scale())
            .map(|(n, lg)| if lg { format!("log_{n}") } else { (*n).to_string() })
            .collect();
        for k in 0..self.eta_dim() {
            names.push(format!("log_sigma{}", k + 1));
        }
        names
    }

    pub fn unconstrained_dim(self) -> usize {
        self.theta_names().len() + self.eta_dim()
    }

    /// Map natural θ (and σ's for models that infer them) to the
    /// unconstrained vector Θ.
    pub fn to_unconstrained(self, theta_nat: &DVector<f64>, sigma: &[f64]) -> DVector<f64> {
        let lg = self.log_scale();
        let mut u = Vec::with_capacity(self.unconstrained_dim());
        for (j, &v) in theta_nat.iter().enumerate() {
            u.push(if lg[j] { v.ln() } else { v });
        }
        for k in 0..self.eta_dim() {
            u.push(sigma[k].ln());
        }
        DVector::from_row_slice(&u)
    }

    /// Map the unconstrained vector back to (natural θ, per-variable σ's).
    pub fn from_unconstrained(self, u: &DVector<f64>) -> (DVector<f64>, Vec<f64>) {
        let lg = self.log_scale();
        let p = lg.len();
        let theta = DVector::from_fn(p, |j, _| if lg[j] { u[j].exp() } else { u[j] });
        let (d, _) = self.dims();
        let sigma = if self.eta_dim() > 0 {
            (0..self.eta_dim()).map(|k| u[p + k].exp()).collect()
        } else {
            vec![self.default_sigma(); d]
        };
        (theta, sigma)
    }

    /// Independent N(0, 10²) priors on the model coordinates, flat on the
    /// prior-scale coordinates.
    pub fn log_prior(self, u: &DVector<f64>) -> f64 {
        let p = self.theta_names().len();
        let mut lp = 0.0;
        for j in 0..p {
            lp += -0.5 * (u[j] / 10.0).powi(2) - 0.5 * (crate::linalg::LN_2PI + (100.0f64).ln());
        }
        lp
    }

    /// IBM prior at the grid implied by n_steps.
    pub fn prior(self, sigma: &[f64], n_steps: usize) -> Result<BlockPrior> {
        let (d, q) = self.dims();
        let (t0, t1) = self.window();
        let dt = (t1 - t0) / n_steps as f64;
        let sig: Vec<f64> = if sigma.len() == d {
            sigma.to_vec()
        } else if sigma.len() == 1 {
            vec![sigma[0]; d]
        } else if sigma.len() == self.eta_dim() && self == ModelId::Fitz {
            sigma.to_vec()
        } else {
            return invalid(format!("expected {d} (or 1) sigma values, got {}", sigma.len()));
        };
        ibm_init(dt, q, &sig)
    }

    /// The ODE problem at natural-scale parameters.
    pub fn problem(self, theta_nat: &DVector<f64>) -> Result<OdeProblem> {
        if theta_nat.len() != self.theta_names().len() {
            return invalid(format!(
                "model {} takes {} parameters, got {}",
                self.name(),
                self.theta_names().len(),
                theta_nat.len()
            ));
        }
        match self {
            ModelId::Chkrebtii => chkrebtii_problem(),
            ModelId::Fitz => fitz_problem(theta_nat),
            ModelId::Hes1 => hes1_problem(theta_nat),
            ModelId::Seirah => seirah_problem(theta_nat),
        }
    }

    /// First-order field on the value coordinates, for the deterministic
    /// baseline solvers. The chkrebtii model exposes its companion form
    /// (x, x′).
    pub fn first_order_field(
        self,
        theta_nat: &DVector<f64>,
    ) -> Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync> {
        match self {
            ModelId::Chkrebtii => Arc::new(|x: &DVector<f64>, t: f64| {
                DVector::from_row_slice(&[x[1], (2.0 * t).sin() - x[0]])
            }),
            ModelId::Fitz => {
                let th = theta_nat.clone();
                Arc::new(move |x: &DVector<f64>, _t| fitz_field(&th, x))
            }
            ModelId::Hes1 => {
                let th = theta_nat.clone();
                Arc::new(move |x: &DVector<f64>, _t| hes1_field(&th, x))
            }
            ModelId::Seirah => {
                let th = theta_nat.clone();
                let n_pop = seirah_population(&th);
                Arc::new(move |x: &DVector<f64>, _t| seirah_field(&th, n_pop, x))
            }
        }
    }

    /// First-order initial values on the value coordinates.
    pub fn first_order_init(self, theta_nat: &DVector<f64>) -> DVector<f64> {
        match self {
            ModelId::Chkrebtii => DVector::from_row_slice(&[-1.0, 0.0]),
            ModelId::Fitz => DVector::from_row_slice(&[theta_nat[3], theta_nat[4]]),
            ModelId::Hes1 => {
                DVector::from_row_slice(&[theta_nat[7].ln(), theta_nat[8].ln(), theta_nat[9].ln()])
            }
            ModelId::Seirah => seirah_init(theta_nat),
        }
    }

    /// Observation schedule.
    pub fn obs_times(self) -> Vec<f64> {
        match self {
            ModelId::Chkrebtii => vec![],
            ModelId::Fitz => (0..=40).map(|i| i as f64).collect(),
            ModelId::Hes1 => (0..=32).map(|i| 7.5 * i as f64).collect(),
            ModelId::Seirah => (0..=60).map(|i| i as f64).collect(),
        }
    }

    /// Gaussian observation model, for the models that have one.
    pub fn gauss_obs(self) -> Option<GaussObsModel> {
        let (_, q) = self.dims();
        match self {
            ModelId::Fitz => {
                let mut d = DMatrix::zeros(1, q);
                d[(0, 0)] = 1.0;
                let om = DMatrix::from_row_slice(1, 1, &[self.phi() * self.phi()]);
                Some(GaussObsModel::time_invariant(
                    self.obs_times(),
                    vec![d.clone(), d],
                    vec![om.clone(), om],
                ))
            }
            ModelId::Hes1 => {
                // P and M alternate every 7.5 minutes; H is never observed
                let times = self.obs_times();
                let mut sel = DMatrix::zeros(1, q);
                sel[(0, 0)] = 1.0;
                let zero_w = DMatrix::zeros(1, q);
                let om = DMatrix::from_row_slice(1, 1, &[self.phi() * self.phi()]);
                let zero_v = DMatrix::zeros(1, 1);
                let mut weight = Vec::with_capacity(times.len());
                let mut var = Vec::with_capacity(times.len());
                for i in 0..times.len() {
                    if i % 2 == 0 {
                        weight.push(vec![sel.clone(), zero_w.clone(), zero_w.clone()]);
                        var.push(vec![om.clone(), zero_v.clone(), zero_v.clone()]);
                    } else {
                        weight.push(vec![zero_w.clone(), sel.clone(), zero_w.clone()]);
                        var.push(vec![zero_v.clone(), om.clone(), zero_v.clone()]);
                    }
                }
                Some(GaussObsModel { obs_times: times, weight, var })
            }
            _ => None,
        }
    }

    /// Generic observation model at natural-scale parameters (Poisson counts
    /// of the new-case rates for seirah).
    pub fn gen_obs(self, theta_nat: &DVector<f64>) -> Option<GenObsModel> {
        match self {
            ModelId::Seirah => {
                let (d, q) = self.dims();
                let mut sel = DMatrix::zeros(1, q);
                sel[(0, 0)] = 1.0;
                let zero = DMatrix::zeros(1, q);
                // E (block 1) and I (block 2) drive the observed rates
                let mask: Vec<DMatrix<f64>> = (0..d)
                    .map(|k| if k == 1 || k == 2 { sel.clone() } else { zero.clone() })
                    .collect();
                let c_i = theta_nat[1] / theta_nat[3]; // r / D_e
                let c_h = 1.0 / theta_nat[5]; // 1 / D_q
                let loglik = move |_i: usize, y: &DVector<f64>, s: &DVector<f64>| {
                    // a non-positive rate is impossible under the model
                    if s[1] <= 0.0 || s[2] <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    poisson_logpmf(y[0], c_i * s[1]) + poisson_logpmf(y[1], c_h * s[2])
                };
                let grad = move |_i: usize, y: &DVector<f64>, s: &DVector<f64>| {
                    let mut g = DVector::zeros(s.len());
                    if s[1] > 0.0 {
                        g[1] = (y[0] / (c_i * s[1]) - 1.0) * c_i;
                    }
                    if s[2] > 0.0 {
                        g[2] = (y[1] / (c_h * s[2]) - 1.0) * c_h;
                    }
                    g
                };
                let hess = move |_i: usize, y: &DVector<f64>, s: &DVector<f64>| {
                    let mut h = DMatrix::zeros(s.len(), s.len());
                    // at non-positive rates the curvature is zeroed, which
                    // drops the corresponding pseudo-observation
                    if s[1] > 0.0 {
                        let lam = c_i * s[1];
                        h[(1, 1)] = -y[0] * c_i * c_i / (lam * lam);
                    }
                    if s[2] > 0.0 {
                        let lam = c_h * s[2];
                        h[(2, 2)] = -y[1] * c_h * c_h / (lam * lam);
                    }
                    h
                };
                Some(GenObsModel {
                    obs_times: self.obs_times(),
                    mask: vec![mask; 61],
                    loglik: Arc::new(loglik),
                    grad: Some(Arc::new(grad)),
                    hess: Some(Arc::new(hess)),
                })
            }
            _ => None,
        }
    }

    /// The observation model used by the plug-in and MAGI methods.
    pub fn obs_model(self, theta_nat: &DVector<f64>) -> Option<ObsModel> {
        if let Some(g) = self.gauss_obs() {
            return Some(ObsModel::Gauss(g));
        }
        self.gen_obs(theta_nat).map(ObsModel::General)
    }

    /// Fine solver grid for data simulation: at least 10⁴ steps, with every
    /// observation time landing exactly on a grid point.
    pub fn fine_steps(self) -> usize {
        match self {
            ModelId::Chkrebtii => 10_000,
            ModelId::Fitz => 10_000,
            ModelId::Hes1 => 10_080,
            ModelId::Seirah => 10_020,
        }
    }

    pub fn supports_inference(self) -> bool {
        !matches!(self, ModelId::Chkrebtii)
    }

    /// Column names of the observation vector, as written to CSV.
    pub fn obs_names(self) -> Vec<&'static str> {
        match self {
            ModelId::Chkrebtii => vec![],
            ModelId::Fitz => vec!["V", "R"],
            ModelId::Hes1 => vec!["P", "M", "H"],
            ModelId::Seirah => vec!["new_I", "new_H"],
        }
    }

    /// Spacing of the observation schedule.
    pub fn obs_spacing(self) -> f64 {
        match self {
            ModelId::Chkrebtii => 0.0,
            ModelId::Fitz | ModelId::Seirah => 1.0,
            ModelId::Hes1 => 7.5,
        }
    }
}

fn chkrebtii_problem() -> Result<OdeProblem> {
    let q = 4;
    let mut w = DMatrix::zeros(1, q);
    w[(0, 2)] = 1.0;
    // x(0) = -1, x'(0) = 0, x''(0) = sin(0) - x(0) = 1, x'''(0) padded with 0
    let init = DMatrix::from_row_slice(1, q, &[-1.0, 0.0, 1.0, 0.0]);
    let field = Arc::new(|x: &DMatrix<f64>, t: f64| {
        DMatrix::from_row_slice(1, 1, &[(2.0 * t).sin() - x[(0, 0)]])
    });
    let jacobian = Arc::new(|_x: &DMatrix<f64>, _t: f64| {
        let mut j = DMatrix::zeros(1, 4);
        j[(0, 0)] = -1.0;
        j
    });
    Ok(OdeProblem {
        weight: vec![w],
        init,
        t_min: 0.0,
        t_max: 10.0,
        field,
        jacobian: Some(jacobian),
        params: BTreeMap::new(),
    })
}

fn fitz_field(th: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let (a, b, c) = (th[0], th[1], th[2]);
    let (v, r) = (x[0], x[1]);
    DVector::from_row_slice(&[c * (v - v.powi(3) / 3.0 + r), -(v - a + b * r) / c])
}

fn fitz_problem(th: &DVector<f64>) -> Result<OdeProblem> {
    let q = 3;
    let theta = th.clone();
    let (weight, field) =
        first_order_pad(move |x: &DVector<f64>, _t| fitz_field(&theta, x), 2, q)?;
    let x0 = DVector::from_row_slice(&[th[3], th[4]]);
    let dx0 = fitz_field(th, &x0);
    let init = DMatrix::from_row_slice(2, q, &[x0[0], dx0[0], 0.0, x0[1], dx0[1], 0.0]);
    let (b, c) = (th[1], th[2]);
    let jac = Arc::new(move |x: &DMatrix<f64>, _t: f64| {
        let v = x[(0, 0)];
        let mut j = DMatrix::zeros(2, 2 * q);
        j[(0, 0)] = c * (1.0 - v * v);
        j[(0, q)] = c;
        j[(1, 0)] = -1.0 / c;
        j[(1, q)] = -b / c;
        j
    });
    let mut params = BTreeMap::new();
    for (name, value) in ModelId::Fitz.theta_names().iter().zip(th.iter()) {
        params.insert((*name).to_string(), *value);
    }
    Ok(OdeProblem {
        weight,
        init,
        t_min: 0.0,
        t_max: 40.0,
        field,
        jacobian: Some(jac),
        params,
    })
}

fn hes1_field(th: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    // log-scale dynamics of dP/dt = -aPH + bM - cP, dM/dt = -dM + e/(1+P^2),
    // dH/dt = -aPH + f/(1+P^2) - gH
    let (a, b, c, d, e, f, g) = (th[0], th[1], th[2], th[3], th[4], th[5], th[6]);
    let (u1, u2, u3) = (u[0], u[1], u[2]);
    let denom = 1.0 + (2.0 * u1).exp();
    DVector::from_row_slice(&[
        -a * u3.exp() + b * (u2 - u1).exp() - c,
        -d + e * (-u2).exp() / denom,
        -a * u1.exp() + f * (-u3).exp() / denom - g,
    ])
}

fn hes1_problem(th: &DVector<f64>) -> Result<OdeProblem> {
    let q = 3;
    if th.iter().any(|v| !(*v > 0.0)) {
        return invalid("hes1 parameters must be positive");
    }
    let theta = th.clone();
    let (weight, field) =
        first_order_pad(move |u: &DVector<f64>, _t| hes1_field(&theta, u), 3, q)?;
    let u0 = DVector::from_row_slice(&[th[7].ln(), th[8].ln(), th[9].ln()]);
    let du0 = hes1_field(th, &u0);
    let mut init = DMatrix::zeros(3, q);
    for k in 0..3 {
        init[(k, 0)] = u0[k];
        init[(k, 1)] = du0[k];
    }
    let theta_j = th.clone();
    let jac = Arc::new(move |x: &DMatrix<f64>, _t: f64| {
        let (a, b, e, f) = (theta_j[0], theta_j[1], theta_j[4], theta_j[5]);
        let (u1, u2, u3) = (x[(0, 0)], x[(1, 0)], x[(2, 0)]);
        let mut j = DMatrix::zeros(3, 3 * q);
        let e12 = (u2 - u1).exp();
        j[(0, 0)] = -b * e12;
        j[(0, q)] = b * e12;
        j[(0, 2 * q)] = -a * u3.exp();
        let w = (2.0 * u1).exp();
        let denom = 1.0 + w;
        let m_term = e * (-u2).exp() / denom;
        j[(1, 0)] = -2.0 * m_term * w / denom;
        j[(1, q)] = -m_term;
        let h_term = f * (-u3).exp() / denom;
        j[(2, 0)] = -a * u1.exp() - 2.0 * h_term * w / denom;
        j[(2, 2 * q)] = -h_term;
        j
    });
    let mut params = BTreeMap::new();
    for (name, value) in ModelId::Hes1.theta_names().iter().zip(th.iter()) {
        params.insert((*name).to_string(), *value);
    }
    Ok(OdeProblem {
        weight,
        init,
        t_min: 0.0,
        t_max: 240.0,
        field,
        jacobian: Some(jac),
        params,
    })
}

fn seirah_init(th: &DVector<f64>) -> DVector<f64> {
    // S, E, I, R, A, H with E(0), I(0) inferred and the rest fixed
    DVector::from_row_slice(&[63_884_630.0, th[6], th[7], 0.0, 618_013.0, 13_388.0])
}

fn seirah_population(th: &DVector<f64>) -> f64 {
    seirah_init(th).sum()
}

const SEIRAH_D_H: f64 = 30.0;

fn seirah_field(th: &DVector<f64>, n_pop: f64, x: &DVector<f64>) -> DVector<f64> {
    let (b, r, alpha, d_e, d_i, d_q) = (th[0], th[1], th[2], th[3], th[4], th[5]);
    let (s, e, i, _r, a, h) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    let infections = b * s * (i + alpha * a) / n_pop;
    DVector::from_row_slice(&[
        -infections,
        infections - e / d_e,
        r * e / d_e - i / d_q - i / d_i,
        (i + a) / d_i + h / SEIRAH_D_H,
        (1.0 - r) * e / d_e - a / d_i,
        i / d_q - h / SEIRAH_D_H,
    ])
}

fn seirah_problem(th: &DVector<f64>) -> Result<OdeProblem> {
    let q = 3;
    if th.iter().any(|v| !(*v > 0.0)) {
        return invalid("seirah parameters must be positive");
    }
    let n_pop = seirah_population(th);
    let theta = th.clone();
    let (weight, field) =
        first_order_pad(move |x: &DVector<f64>, _t| seirah_field(&theta, n_pop, x), 6, q)?;
    let x0 = seirah_init(th);
    let dx0 = seirah_field(th, n_pop, &x0);
    let mut init = DMatrix::zeros(6, q);
    for k in 0..6 {
        init[(k, 0)] = x0[k];
        init[(k, 1)] = dx0[k];
    }
    let theta_j = th.clone();
    let jac = Arc::new(move |x: &DMatrix<f64>, _t: f64| {
        let (b, r, alpha, d_e, d_i, d_q) =
            (theta_j[0], theta_j[1], theta_j[2], theta_j[3], theta_j[4], theta_j[5]);
        let (s, i, a) = (x[(0, 0)], x[(2, 0)], x[(4, 0)]);
        let mut j = DMatrix::zeros(6, 6 * q);
        let col = |k: usize| k * q;
        let dinf_ds = b * (i + alpha * a) / n_pop;
        let dinf_di = b * s / n_pop;
        let dinf_da = b * s * alpha / n_pop;
        // S' = -infections
        j[(0, col(0))] = -dinf_ds;
        j[(0, col(2))] = -dinf_di;
        j[(0, col(4))] = -dinf_da;
        // E' = infections - E/D_e
        j[(1, col(0))] = dinf_ds;
        j[(1, col(1))] = -1.0 / d_e;
        j[(1, col(2))] = dinf_di;
        j[(1, col(4))] = dinf_da;
        // I' = rE/D_e - I/D_q - I/D_I
        j[(2, col(1))] = r / d_e;
        j[(2, col(2))] = -1.0 / d_q - 1.0 / d_i;
        // R' = (I+A)/D_I + H/D_h
        j[(3, col(2))] = 1.0 / d_i;
        j[(3, col(4))] = 1.0 / d_i;
        j[(3, col(5))] = 1.0 / SEIRAH_D_H;
        // A' = (1-r)E/D_e - A/D_I
        j[(4, col(1))] = (1.0 - r) / d_e;
        j[(4, col(4))] = -1.0 / d_i;
        // H' = I/D_q - H/D_h
        j[(5, col(2))] = 1.0 / d_q;
        j[(5, col(5))] = -1.0 / SEIRAH_D_H;
        j
    });
    let mut params = BTreeMap::new();
    for (name, value) in ModelId::Seirah.theta_names().iter().zip(th.iter()) {
        params.insert((*name).to_string(), *value);
    }
    Ok(OdeProblem {
        weight,
        init,
        t_min: 0.0,
        t_max: 60.0,
        field,
        jacobian: Some(jac),
        params,
    })
}

/// Simulate observations for a model: solve with a fine grid and the
/// block-Jacobian interrogation, then draw measurement noise at the
/// observation times. Returns (times, observations); deterministic in `key`.
pub fn simulate_data(
    key: RngKey,
    model: ModelId,
    theta_nat: &DVector<f64>,
    phi: f64,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    if theta_nat.len() != model.theta_names().len() {
        return invalid(format!(
            "model {} takes {} parameters, got {}",
            model.name(),
            model.theta_names().len(),
            theta_nat.len()
        ));
    }
    let times = model.obs_times();
    if times.is_empty() {
        return invalid(format!("model {} has no observation schedule", model.name()));
    }
    let problem = model.problem(theta_nat)?;
    let (d, _q) = model.dims();
    let prior = model.prior(&[model.default_sigma()], model.fine_steps())?;
    let spec = SolverSpec::new(model.fine_steps(), InterrogationMethod::Kramer);
    let mv = solve_mv(&problem, &prior, &spec)?;
    let idx = crate::inference::grid_indices(&times, problem.t_min, problem.t_max, model.fine_steps())?;

    let mut out = Vec::with_capacity(times.len());
    match model {
        ModelId::Seirah => {
            let mut rng = key.rng();
            let (r, d_e, d_q) = (theta_nat[1], theta_nat[3], theta_nat[5]);
            for &n in &idx {
                let e = mv.means[n][(1, 0)];
                let i = mv.means[n][(2, 0)];
                let lam_i = (r * e / d_e).max(1e-12);
                let lam_h = (i / d_q).max(1e-12);
                let y0 = Poisson::new(lam_i).map_err(|_| {
                    crate::error::Error::Numerical(format!("invalid Poisson rate {lam_i}"))
                })?;
                let y1 = Poisson::new(lam_h).map_err(|_| {
                    crate::error::Error::Numerical(format!("invalid Poisson rate {lam_h}"))
                })?;
                out.push(DVector::from_row_slice(&[
                    y0.sample(&mut rng).round(),
                    y1.sample(&mut rng).round(),
                ]));
            }
        }
        ModelId::Hes1 => {
            let mut rng = key.rng();
            for (i, &n) in idx.iter().enumerate() {
                // alternating P / M observation, H never observed
                let block = if i % 2 == 0 { 0 } else { 1 };
                let mut y = DVector::zeros(d);
                let eps: f64 = rng.sample(StandardNormal);
                y[block] = mv.means[n][(block, 0)] + phi * eps;
                out.push(y);
            }
        }
        _ => {
            let mut rng = key.rng();
            for &n in &idx {
                let y = DVector::from_fn(d, |k, _| {
                    let eps: f64 = rng.sample(StandardNormal);
                    mv.means[n][(k, 0)] + phi * eps
                });
                out.push(y);
            }
        }
    }
    Ok((times, out))
}
