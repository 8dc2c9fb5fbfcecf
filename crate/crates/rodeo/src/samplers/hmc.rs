//! Hamiltonian Monte Carlo with leapfrog integration, dual-averaging step
//! size adaptation, and diagonal mass estimation in expanding warmup windows
//! (75 initial fast iterations, doubling slow windows, 50 final fast).

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::numdiff::{fd_grad, FdConfig};
use crate::rng::RngKey;

use super::ChainResult;

#[derive(Debug, Clone)]
pub struct HmcOptions {
    pub n_warmup: usize,
    pub n_samples: usize,
    pub n_leapfrog: usize,
    pub target_accept: f64,
    /// Starting step size before adaptation.
    pub init_step_size: f64,
    /// Freeze the step size at `init_step_size` (no dual averaging).
    pub fixed_step_size: bool,
    pub fd: FdConfig,
    /// Energy-error cutoff beyond which a trajectory counts as divergent.
    pub divergence_energy: f64,
}

impl Default for HmcOptions {
    fn default() -> Self {
        HmcOptions {
            n_warmup: 500,
            n_samples: 1000,
            n_leapfrog: 5,
            target_accept: 0.8,
            init_step_size: 0.1,
            fixed_step_size: false,
            fd: FdConfig::default(),
            divergence_energy: 1000.0,
        }
    }
}

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    fn new(eps0: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: eps0.ln(),
            h_bar: 0.0,
            t: 0.0,
            target,
        }
    }

    fn update(&mut self, alpha: f64) {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.t += 1.0;
        let frac = 1.0 / (self.t + T0);
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - alpha);
        self.log_eps = self.mu - self.t.sqrt() / GAMMA * self.h_bar;
        let w = self.t.powf(-KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Warmup phases: step-size-only buffers around doubling mass windows.
fn mass_window_ends(n_warmup: usize) -> Vec<usize> {
    const INIT: usize = 75;
    const TERM: usize = 50;
    const BASE: usize = 25;
    if n_warmup < INIT + TERM + BASE {
        return Vec::new();
    }
    let slow_end = n_warmup - TERM;
    let mut ends = Vec::new();
    let mut start = INIT;
    let mut width = BASE;
    while start < slow_end {
        let mut end = start + width;
        // absorb a final shorter-than-double window
        if end + 2 * width > slow_end {
            end = slow_end;
        }
        ends.push(end.min(slow_end));
        start = end;
        width *= 2;
    }
    ends
}

/// Running second moments for the mass estimate.
struct Moments {
    n: usize,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments { n: 0, mean: DVector::zeros(dim), m2: DVector::zeros(dim) }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.n += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.n as f64;
        for j in 0..x.len() {
            self.m2[j] += delta[j] * (x[j] - self.mean[j]);
        }
    }

    /// Regularized variance, shrunk toward unit scale for short windows.
    fn variance(&self) -> Option<DVector<f64>> {
        if self.n < 10 {
            return None;
        }
        let n = self.n as f64;
        let w = n / (n + 5.0);
        Some(DVector::from_fn(self.mean.len(), |j, _| {
            (w * self.m2[j] / (n - 1.0) + (1.0 - w) * 1e-3).max(1e-10)
        }))
    }
}

/// Leapfrog HMC chain over `logpost`; gradients are analytic when given,
/// otherwise central finite differences. Deterministic in `key`.
pub fn hmc_chain<F>(
    key: RngKey,
    logpost: F,
    grad: Option<&dyn Fn(&DVector<f64>) -> DVector<f64>>,
    theta0: &DVector<f64>,
    opts: &HmcOptions,
) -> Result<ChainResult>
where
    F: Fn(&DVector<f64>) -> f64,
{
    if opts.n_leapfrog < 1 {
        return invalid("hmc needs n_leapfrog >= 1");
    }
    if opts.n_samples < 1 {
        return invalid("hmc needs n_samples >= 1");
    }
    let dim = theta0.len();
    let grad_fn = |x: &DVector<f64>| -> Result<DVector<f64>> {
        match grad {
            Some(g) => Ok(g(x)),
            None => fd_grad(&logpost, x, &opts.fd),
        }
    };

    let mut q = theta0.clone();
    let mut lp = logpost(&q);
    if !lp.is_finite() {
        return invalid("log-posterior is not finite at the starting point");
    }
    let mut g = grad_fn(&q)?;

    // inverse mass = posterior variance estimate; mass enters the kinetic
    // energy as p'M⁻¹p/2 with p ~ N(0, M)
    let mut inv_mass = DVector::<f64>::from_element(dim, 1.0);
    let mut da = DualAveraging::new(opts.init_step_size, opts.target_accept);
    let window_ends = mass_window_ends(opts.n_warmup);
    let mut window_i = 0;
    let mut moments = Moments::new(dim);

    let mut draws = Vec::with_capacity(opts.n_samples);
    let mut accepted = 0usize;
    let mut divergences = 0usize;

    let total = opts.n_warmup + opts.n_samples;
    let mut eps = opts.init_step_size;
    for iter in 0..total {
        let k = key.split(iter as u64);
        let warming = iter < opts.n_warmup;
        if !opts.fixed_step_size {
            eps = if warming { da.current() } else { da.adapted() };
        }

        // momentum draw: p ~ N(0, M), M = 1/inv_mass
        let noise = k.split(0).normal_vector(dim);
        let p0 = DVector::from_fn(dim, |j, _| noise[j] / inv_mass[j].sqrt());
        let kin0 = 0.5 * (0..dim).map(|j| p0[j] * p0[j] * inv_mass[j]).sum::<f64>();

        let mut q_new = q.clone();
        let mut g_new = g.clone();
        let mut p = p0.clone();
        let mut ok = true;
        for _ in 0..opts.n_leapfrog {
            p += 0.5 * eps * &g_new;
            for j in 0..dim {
                q_new[j] += eps * inv_mass[j] * p[j];
            }
            match grad_fn(&q_new) {
                Ok(gg) if gg.iter().all(|v| v.is_finite()) => g_new = gg,
                _ => {
                    ok = false;
                    break;
                }
            }
            p += 0.5 * eps * &g_new;
        }
        let lp_new = if ok { logpost(&q_new) } else { f64::NEG_INFINITY };
        let kin_new = 0.5 * (0..dim).map(|j| p[j] * p[j] * inv_mass[j]).sum::<f64>();
        let d_energy = (lp_new - kin_new) - (lp - kin0);
        let divergent = !d_energy.is_finite() || -d_energy > opts.divergence_energy;
        let alpha = if divergent { 0.0 } else { d_energy.min(0.0).exp() };
        let accept = !divergent && k.split(1).uniform() < alpha;
        if accept {
            q = q_new;
            lp = lp_new;
            g = g_new;
        }
        if warming {
            if !opts.fixed_step_size {
                da.update(alpha);
            }
            moments.push(&q);
            if window_i < window_ends.len() && iter + 1 == window_ends[window_i] {
                if let Some(var) = moments.variance() {
                    inv_mass = var;
                }
                moments = Moments::new(dim);
                if !opts.fixed_step_size {
                    da = DualAveraging::new(da.current(), opts.target_accept);
                }
                window_i += 1;
            }
        } else {
            if divergent {
                divergences += 1;
            }
            if accept {
                accepted += 1;
            }
            draws.push(q.clone());
        }
    }

    let acceptance_rate = accepted as f64 / opts.n_samples as f64;
    Ok(ChainResult {
        draws,
        acceptance_rate,
        step_size: Some(eps),
        mass_diag: Some(DVector::from_fn(dim, |j, _| 1.0 / inv_mass[j])),
        divergences,
        all_rejected: accepted == 0,
    })
}
