//! Batch CLI: solve a built-in model, simulate observations, run parameter
//! inference, or benchmark the solver against the deterministic baselines.
//! Outputs are plot-ready CSV tables plus a JSON run manifest.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{euler_solve, rk4_solve};
use crate::error::{invalid, Error, Result};
use crate::inference::{
    basic_loglik, dalton_loglik, dalton_ng_loglik, fenrir_loglik, magi_beta, magi_logpost,
    magi_logpost_grad_u, MagiConfig, MarginalTarget, ObsModel,
};
use crate::interrogate::InterrogationMethod;
use crate::kalman::KalmanType;
use crate::models::{closed_form_chkrebtii, simulate_data, ModelId, ALL_MODELS};
use crate::rng::RngKey;
use crate::samplers::{hmc_chain, laplace_fit, rwm_marginal_chain, ChainResult, HmcOptions, LaplaceOptions};
use crate::solver::{solve_mv, SolverSpec};

/// Inference method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Basic,
    Fenrir,
    Dalton,
    DaltonNg,
    Magi,
    MarginalMcmc,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Ok(Method::Basic),
            "fenrir" => Ok(Method::Fenrir),
            "dalton" => Ok(Method::Dalton),
            "daltonng" | "dalton-ng" => Ok(Method::DaltonNg),
            "magi" => Ok(Method::Magi),
            "marginal-mcmc" | "marginal" => Ok(Method::MarginalMcmc),
            other => invalid(format!(
                "method: unknown '{other}' (expected basic|fenrir|dalton|daltonng|magi|marginal-mcmc)"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Basic => "basic",
            Method::Fenrir => "fenrir",
            Method::Dalton => "dalton",
            Method::DaltonNg => "daltonng",
            Method::Magi => "magi",
            Method::MarginalMcmc => "marginal-mcmc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Laplace,
    Hmc,
    Rwm,
}

impl Sampler {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "laplace" => Ok(Sampler::Laplace),
            "hmc" => Ok(Sampler::Hmc),
            "rwm" => Ok(Sampler::Rwm),
            other => invalid(format!("sampler: unknown '{other}' (expected laplace|hmc|rwm)")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sampler::Laplace => "laplace",
            Sampler::Hmc => "hmc",
            Sampler::Rwm => "rwm",
        }
    }
}

fn parse_kalman(s: &str) -> Result<KalmanType> {
    match s.to_ascii_lowercase().as_str() {
        "standard" => Ok(KalmanType::Standard),
        "square-root" | "sqrt" => Ok(KalmanType::SquareRoot),
        other => invalid(format!("kalman_type: unknown '{other}' (expected standard|square-root)")),
    }
}

/// One run's full configuration; the config file mirrors these fields and
/// command-line flags override them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: String,
    pub method: String,
    pub sampler: String,
    pub n_steps: usize,
    pub interrogation: String,
    pub kalman_type: String,
    pub seed: u64,
    /// Prior scale σ; defaults to the model's own.
    pub sigma: Option<f64>,
    pub n_samples: usize,
    pub n_warmup: usize,
    pub n_leapfrog: Option<usize>,
    pub sigma_rw: Option<f64>,
    /// MAGI prior temperature; defaults to the η⁻²·Δt^(2−2q)·Δt′ rule.
    pub beta: Option<f64>,
    /// Observation CSV to fit; when absent, data is simulated at the true
    /// parameters with a seed-derived key.
    pub data: Option<String>,
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: String::new(),
            method: "basic".into(),
            sampler: "laplace".into(),
            n_steps: 100,
            interrogation: "kramer".into(),
            kalman_type: "standard".into(),
            seed: 0,
            sigma: None,
            n_samples: 1000,
            n_warmup: 500,
            n_leapfrog: None,
            sigma_rw: None,
            beta: None,
            data: None,
            out: "out".into(),
        }
    }
}

impl RunConfig {
    fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Parser, Debug)]
#[command(name = "rodeo", version, about = "Probabilistic ODE solving and parameter inference")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Solve a model and write the posterior mean and standard deviations
    Solve(CommonArgs),
    /// Simulate noisy observations at the model's true parameters
    Simulate(CommonArgs),
    /// Run parameter inference and write posterior summaries
    Infer(InferArgs),
    /// Compare the solver against Euler and RK4 over a grid of step counts
    Benchmark(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Built-in model name (chkrebtii|fitz|hes1|seirah)
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n_steps: Option<usize>,
    /// Interrogation method (schober|chkrebtii|tronarp|kramer)
    #[arg(long)]
    interrogation: Option<String>,
    /// Kalman implementation (standard|square-root)
    #[arg(long)]
    kalman_type: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Prior scale σ
    #[arg(long)]
    sigma: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
    /// JSON config file mirroring the run configuration
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct InferArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Likelihood construction (basic|fenrir|dalton|daltonng|magi|marginal-mcmc)
    #[arg(long)]
    method: Option<String>,
    /// Posterior summarizer (laplace|hmc|rwm)
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    n_warmup: Option<usize>,
    #[arg(long)]
    n_leapfrog: Option<usize>,
    /// Random-walk proposal scale for marginal MCMC
    #[arg(long)]
    sigma_rw: Option<f64>,
    /// MAGI prior temperature
    #[arg(long)]
    beta: Option<f64>,
    /// Observation CSV (as written by `simulate`)
    #[arg(long)]
    data: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated list of step counts
    #[arg(long, value_delimiter = ',')]
    n_steps_list: Option<Vec<usize>>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Invalid(format!("config: failed to parse {}: {e}", p.display())))
        }
    }
}

fn merge_common(cfg: &mut RunConfig, args: &CommonArgs) {
    if let Some(v) = &args.model {
        cfg.model = v.clone();
    }
    if let Some(v) = args.n_steps {
        cfg.n_steps = v;
    }
    if let Some(v) = &args.interrogation {
        cfg.interrogation = v.clone();
    }
    if let Some(v) = &args.kalman_type {
        cfg.kalman_type = v.clone();
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.sigma {
        cfg.sigma = Some(v);
    }
    if let Some(v) = &args.out {
        cfg.out = v.clone();
    }
    if let Ok(seed) = std::env::var("RODEO_SEED") {
        if let Ok(v) = seed.trim().parse::<u64>() {
            cfg.seed = v;
        }
    }
}

fn format_field(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        v.to_string()
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push_str("\r\n");
    for row in rows {
        out.push_str(&row.join(","));
        out.push_str("\r\n");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn model_from(cfg: &RunConfig) -> Result<ModelId> {
    if cfg.model.is_empty() {
        return invalid(format!(
            "model: missing; available models: {}",
            ALL_MODELS.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
        ));
    }
    ModelId::parse(&cfg.model)
}

fn validate_steps(cfg: &RunConfig) -> Result<()> {
    if cfg.n_steps < 1 {
        return invalid("n_steps: must be at least 1");
    }
    Ok(())
}

fn cmd_solve(cfg: &RunConfig) -> Result<()> {
    let model = model_from(cfg)?;
    validate_steps(cfg)?;
    let interrogation = InterrogationMethod::parse(&cfg.interrogation)?;
    let kalman = parse_kalman(&cfg.kalman_type)?;
    let dir = ensure_out_dir(cfg)?;
    let theta = model.true_theta();
    let problem = model.problem(&theta)?;
    let sigma = cfg.sigma.unwrap_or_else(|| model.default_sigma());
    let prior = model.prior(&[sigma], cfg.n_steps)?;
    let spec = SolverSpec::new(cfg.n_steps, interrogation)
        .with_kalman_type(kalman)
        .with_key(RngKey::new(cfg.seed));
    let mv = solve_mv(&problem, &prior, &spec)?;
    let (d, q) = model.dims();
    let header = ["t", "var", "deriv", "mean", "sd"].iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut rows = Vec::new();
    for n in 0..=cfg.n_steps {
        for k in 0..d {
            for j in 0..q {
                rows.push(vec![
                    format_field(mv.times[n]),
                    k.to_string(),
                    j.to_string(),
                    format_field(mv.means[n][(k, j)]),
                    format_field(mv.sd(n, k, j)),
                ]);
            }
        }
    }
    let path = dir.join("solve.csv");
    write_csv(&path, &header, &rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let model = model_from(cfg)?;
    if !model.supports_inference() {
        return invalid(format!("model: {} has no observation schedule to simulate", model.name()));
    }
    let dir = ensure_out_dir(cfg)?;
    let key = RngKey::new(cfg.seed).split(0xDA7A);
    let (times, data) = simulate_data(key, model, &model.true_theta(), model.phi())?;
    let mut header = vec!["t".to_string()];
    header.extend(model.obs_names().iter().map(|s| s.to_string()));
    let rows: Vec<Vec<String>> = times
        .iter()
        .zip(data.iter())
        .map(|(t, y)| {
            let mut row = vec![format_field(*t)];
            row.extend(y.iter().map(|v| format_field(*v)));
            row
        })
        .collect();
    let path = dir.join("obs.csv");
    write_csv(&path, &header, &rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Load observations written by `simulate`; the time column must match the
/// model's schedule.
pub fn load_observations(model: ModelId, path: &Path) -> Result<Vec<DVector<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Invalid(format!("data: {} is empty", path.display())))?;
    let cols: Vec<&str> = header.trim().split(',').map(|c| c.trim()).collect();
    let expect = 1 + model.obs_names().len();
    if cols.len() != expect {
        return invalid(format!(
            "data: expected {expect} columns (t plus {:?}), got {}",
            model.obs_names(),
            cols.len()
        ));
    }
    let schedule = model.obs_times();
    let mut data = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != expect {
            return invalid(format!("data: row {} has {} fields, expected {expect}", i + 1, fields.len()));
        }
        let mut parsed = Vec::with_capacity(expect);
        for f in &fields {
            parsed.push(f.trim().parse::<f64>().map_err(|_| {
                Error::Invalid(format!("data: row {} has a non-numeric field '{f}'", i + 1))
            })?);
        }
        if i >= schedule.len() || (parsed[0] - schedule[i]).abs() > 1e-9 * schedule[i].abs().max(1.0) {
            return invalid(format!(
                "data: row {} time {} does not match the model schedule",
                i + 1,
                parsed[0]
            ));
        }
        data.push(DVector::from_row_slice(&parsed[1..]));
    }
    if data.len() != schedule.len() {
        return invalid(format!(
            "data: {} rows but the model schedules {} observations",
            data.len(),
            schedule.len()
        ));
    }
    Ok(data)
}

/// A fully validated parameter-inference problem over the unconstrained
/// parameter vector, shared by the CLI and the acceptance suite.
pub struct InferProblem {
    pub model: ModelId,
    pub method: Method,
    pub n_steps: usize,
    pub interrogation: InterrogationMethod,
    pub kalman_type: KalmanType,
    pub data: Vec<DVector<f64>>,
    pub sigma_override: Option<f64>,
}

impl InferProblem {
    pub fn validate(&self) -> Result<()> {
        if !self.model.supports_inference() {
            return invalid(format!("model: {} has no parameters to infer", self.model.name()));
        }
        let has_gauss = self.model.gauss_obs().is_some();
        match self.method {
            Method::Fenrir | Method::Dalton if !has_gauss => invalid(format!(
                "method: {} requires a Gaussian measurement model, but {} has count observations",
                self.method.name(),
                self.model.name()
            )),
            Method::DaltonNg if has_gauss => invalid(format!(
                "method: daltonng requires a general measurement model, but {} is Gaussian (use dalton)",
                self.model.name()
            )),
            _ => Ok(()),
        }
    }

    fn sigmas(&self, from_theta: &[f64]) -> Vec<f64> {
        if let Some(s) = self.sigma_override {
            let (d, _) = self.model.dims();
            if from_theta.is_empty() {
                return vec![s; d];
            }
        }
        let (d, _) = self.model.dims();
        if from_theta.is_empty() {
            vec![self.sigma_override.unwrap_or_else(|| self.model.default_sigma()); d]
        } else {
            from_theta.to_vec()
        }
    }

    /// The unconstrained log-posterior; numerical failures map to −∞.
    pub fn logpost(&self) -> impl Fn(&DVector<f64>) -> f64 + '_ {
        move |u: &DVector<f64>| {
            let (theta, sig) = self.model.from_unconstrained(u);
            let lp = self.model.log_prior(u);
            let inner = || -> Result<f64> {
                let problem = self.model.problem(&theta)?;
                let sigmas = if self.model.eta_dim() > 0 { sig.clone() } else { self.sigmas(&[]) };
                let prior = self.model.prior(&sigmas, self.n_steps)?;
                let spec = SolverSpec::new(self.n_steps, self.interrogation)
                    .with_kalman_type(self.kalman_type);
                match self.method {
                    Method::Basic => {
                        let obs = self
                            .model
                            .obs_model(&theta)
                            .ok_or_else(|| Error::Invalid("model has no observation model".into()))?;
                        basic_loglik(&problem, &prior, &spec, &obs, &self.data)
                    }
                    Method::Fenrir => {
                        let obs = self.model.gauss_obs().expect("validated");
                        fenrir_loglik(&problem, &prior, &spec, &obs, &self.data)
                    }
                    Method::Dalton => {
                        let obs = self.model.gauss_obs().expect("validated");
                        dalton_loglik(&problem, &prior, &spec, &obs, &self.data)
                    }
                    Method::DaltonNg => {
                        let obs = self
                            .model
                            .gen_obs(&theta)
                            .ok_or_else(|| Error::Invalid("model has no general observation model".into()))?;
                        dalton_ng_loglik(&problem, &prior, &spec, &obs, &self.data)
                    }
                    Method::Magi | Method::MarginalMcmc => {
                        Err(Error::Invalid("method has no closed-form parameter log-posterior".into()))
                    }
                }
            };
            match inner() {
                Ok(ll) if ll.is_finite() => lp + ll,
                _ => f64::NEG_INFINITY,
            }
        }
    }
}

/// MAGI joint HMC over (Θ, Ũ_{1:N}); returns the chain restricted to Θ.
#[allow(clippy::too_many_arguments)]
pub fn run_magi_hmc(
    model: ModelId,
    data: &[DVector<f64>],
    n_steps: usize,
    beta: f64,
    kalman_type: KalmanType,
    key: RngKey,
    n_warmup: usize,
    n_samples: usize,
    n_leapfrog: usize,
) -> Result<ChainResult> {
    let (d, _q) = model.dims();
    let n_active = 1usize;
    let theta0 = model.true_theta();
    let dim_theta = model.unconstrained_dim();
    let u0_theta = model.to_unconstrained(&theta0, &vec![model.default_sigma(); model.eta_dim().max(1)]);

    // latent initialization from the smoothed solver mean at θ₀
    let problem0 = model.problem(&theta0)?;
    let prior0 = model.prior(&[model.default_sigma()], n_steps)?;
    let mv = solve_mv(&problem0, &prior0, &SolverSpec::new(n_steps, InterrogationMethod::Kramer))?;
    let latent_dim = n_steps * d * n_active;
    let mut z0 = DVector::zeros(dim_theta + latent_dim);
    z0.rows_mut(0, dim_theta).copy_from(&u0_theta);
    for n in 1..=n_steps {
        for k in 0..d {
            z0[dim_theta + (n - 1) * d + k] = mv.means[n][(k, 0)];
        }
    }

    let unpack = move |z: &DVector<f64>| -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let u_theta = z.rows(0, dim_theta).into_owned();
        let mut u = Vec::with_capacity(n_steps + 1);
        u.push(DMatrix::zeros(d, n_active)); // filled from v_θ below
        for n in 1..=n_steps {
            u.push(DMatrix::from_fn(d, n_active, |k, _| z[dim_theta + (n - 1) * d + k]));
        }
        (u_theta, u)
    };

    let eval_parts = move |z: &DVector<f64>| -> Result<(f64, DVector<f64>, Vec<DMatrix<f64>>, crate::prior::OdeProblem, crate::prior::BlockPrior, ObsModel)> {
        let (u_theta, mut u) = unpack(z);
        let (theta, _sig) = model.from_unconstrained(&u_theta);
        let problem = model.problem(&theta)?;
        // pin Ũ_0 at the initial condition's active derivatives
        u[0] = DMatrix::from_fn(d, n_active, |k, j| problem.init[(k, j)]);
        let prior = model.prior(&[model.default_sigma()], n_steps)?;
        let obs = model
            .obs_model(&theta)
            .ok_or_else(|| Error::Invalid("model has no observation model".into()))?;
        let lp = model.log_prior(&u_theta);
        Ok((lp, u_theta, u, problem, prior, obs))
    };

    let cfg = MagiConfig { beta, n_active, kalman_type };
    let data_owned: Vec<DVector<f64>> = data.to_vec();
    let logpost = {
        let data = data_owned.clone();
        move |z: &DVector<f64>| -> f64 {
            let parts = match eval_parts(z) {
                Ok(p) => p,
                Err(_) => return f64::NEG_INFINITY,
            };
            let (lp, _u_theta, u, problem, prior, obs) = parts;
            match magi_logpost(&u, &problem, &prior, &obs, &data, &cfg, lp) {
                Ok(v) if v.is_finite() => v,
                _ => f64::NEG_INFINITY,
            }
        }
    };
    // hybrid gradient: analytic in the latent block, finite differences in Θ
    let data_g = data_owned.clone();
    let lp_fn = logpost.clone();
    let grad = move |z: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(z.len());
        if let Ok((lp, _ut, u, problem, prior, obs)) = eval_parts(z) {
            if let Ok((_v, gu)) =
                magi_logpost_grad_u(&u, &problem, &prior, &obs, &data_g, &cfg, lp)
            {
                for n in 1..=n_steps {
                    for k in 0..d {
                        g[dim_theta + (n - 1) * d + k] = gu[n][(k, 0)];
                    }
                }
            }
        }
        // Θ block by central differences of the full joint density
        let mut zp = z.clone();
        for j in 0..dim_theta {
            let h = 1e-6 * z[j].abs().max(1.0);
            zp[j] = z[j] + h;
            let fp = lp_fn(&zp);
            zp[j] = z[j] - h;
            let fm = lp_fn(&zp);
            zp[j] = z[j];
            g[j] = (fp - fm) / (2.0 * h);
        }
        g
    };

    let opts = HmcOptions {
        n_warmup,
        n_samples,
        n_leapfrog,
        init_step_size: 0.01,
        ..Default::default()
    };
    let chain = hmc_chain(key, &logpost, Some(&grad), &z0, &opts)?;
    Ok(ChainResult {
        draws: chain.draws.iter().map(|z| z.rows(0, dim_theta).into_owned()).collect(),
        ..chain
    })
}

/// Marginal MCMC chain over Θ; returns the parameter draws.
pub fn run_marginal_rwm(
    model: ModelId,
    data: &[DVector<f64>],
    n_steps: usize,
    kalman_type: KalmanType,
    key: RngKey,
    sigma_rw: f64,
    n_warmup: usize,
    n_samples: usize,
) -> Result<ChainResult> {
    let obs_times = model.obs_times();
    let log_prior = move |u: &DVector<f64>| model.log_prior(u);
    let build = move |u: &DVector<f64>| -> Result<(crate::prior::OdeProblem, crate::prior::BlockPrior)> {
        let (theta, sig) = model.from_unconstrained(u);
        let problem = model.problem(&theta)?;
        let sigmas = if model.eta_dim() > 0 { sig } else { vec![model.default_sigma(); model.dims().0] };
        let prior = model.prior(&sigmas, n_steps)?;
        Ok((problem, prior))
    };
    let data_owned: Vec<DVector<f64>> = data.to_vec();
    let obs_ll = move |u: &DVector<f64>, states: &[DMatrix<f64>]| -> f64 {
        let (theta, _) = model.from_unconstrained(u);
        let obs = match model.obs_model(&theta) {
            Some(o) => o,
            None => return f64::NEG_INFINITY,
        };
        let mut ll = 0.0;
        for (i, st) in states.iter().enumerate() {
            match obs.loglik_at_state(i, &data_owned[i], st) {
                Ok(v) => ll += v,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        ll
    };
    let target = MarginalTarget {
        log_prior: &log_prior,
        build: &build,
        obs_loglik: &obs_ll,
        obs_times: &obs_times,
        n_steps,
        method: InterrogationMethod::Chkrebtii,
        kalman_type,
    };
    let theta0 = model.true_theta();
    let u0 = model.to_unconstrained(&theta0, &vec![model.default_sigma(); model.eta_dim().max(1)]);
    let sigma = DVector::from_element(u0.len(), sigma_rw);
    rwm_marginal_chain(key, &target, &u0, &sigma, n_warmup, n_samples)
}

fn write_manifest(
    dir: &Path,
    cfg: &RunConfig,
    wall_time_s: f64,
) -> Result<()> {
    let manifest = serde_json::json!({
        "model": cfg.model,
        "method": cfg.method,
        "sampler": cfg.sampler,
        "n_steps": cfg.n_steps,
        "seed": cfg.seed,
        "wall_time_s": wall_time_s,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.hash(),
    });
    let mut f = std::fs::File::create(dir.join("manifest.json"))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(())
}

fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let model = model_from(cfg)?;
    validate_steps(cfg)?;
    let method = Method::parse(&cfg.method)?;
    let sampler = Sampler::parse(&cfg.sampler)?;
    let interrogation = InterrogationMethod::parse(&cfg.interrogation)?;
    let kalman = parse_kalman(&cfg.kalman_type)?;
    match (method, sampler) {
        (Method::Magi, s) if s != Sampler::Hmc => {
            return invalid("sampler: magi requires the hmc sampler");
        }
        (Method::MarginalMcmc, s) if s != Sampler::Rwm => {
            return invalid("sampler: marginal-mcmc requires the rwm sampler");
        }
        (m, Sampler::Rwm) if m != Method::MarginalMcmc => {
            return invalid("sampler: rwm drives the marginal-mcmc method only");
        }
        _ => {}
    }
    let dir = ensure_out_dir(cfg)?;
    let data = match &cfg.data {
        Some(path) => load_observations(model, Path::new(path))?,
        None => {
            let key = RngKey::new(cfg.seed).split(0xDA7A);
            simulate_data(key, model, &model.true_theta(), model.phi())?.1
        }
    };
    let infer = InferProblem {
        model,
        method,
        n_steps: cfg.n_steps,
        interrogation,
        kalman_type: kalman,
        data,
        sigma_override: cfg.sigma,
    };
    infer.validate()?;

    let names = model.unconstrained_names();
    let theta0 = model.true_theta();
    let u0 = model.to_unconstrained(&theta0, &vec![cfg.sigma.unwrap_or_else(|| model.default_sigma()); model.eta_dim().max(1)]);

    match sampler {
        Sampler::Laplace => {
            let logpost = infer.logpost();
            let opts = LaplaceOptions {
                cov_indices: Some((0..model.theta_names().len()).collect()),
                ..Default::default()
            };
            let fit = laplace_fit(&logpost, None, &u0, &opts)?;
            let mut rows = Vec::new();
            for (j, name) in names.iter().enumerate() {
                let sd = fit
                    .cov_indices
                    .iter()
                    .position(|&c| c == j)
                    .map(|pos| format_field(fit.sd(pos)))
                    .unwrap_or_default();
                rows.push(vec![name.clone(), format_field(fit.mode[j]), sd]);
            }
            write_csv(
                &dir.join("posterior.csv"),
                &["param".into(), "estimate".into(), "sd".into()],
                &rows,
            )?;
            let cov_names: Vec<String> =
                fit.cov_indices.iter().map(|&c| names[c].clone()).collect();
            let cov_rows: Vec<Vec<String>> = (0..fit.cov.nrows())
                .map(|i| (0..fit.cov.ncols()).map(|j| format_field(fit.cov[(i, j)])).collect())
                .collect();
            write_csv(&dir.join("cov.csv"), &cov_names, &cov_rows)?;
            println!(
                "laplace fit: converged={} iterations={} logpost={:.4}",
                fit.converged, fit.n_iter, fit.logpost_at_mode
            );
        }
        Sampler::Hmc => {
            let chain = if method == Method::Magi {
                let (_, q) = model.dims();
                let dt = {
                    let (t0, t1) = model.window();
                    (t1 - t0) / cfg.n_steps as f64
                };
                let beta = cfg
                    .beta
                    .unwrap_or_else(|| magi_beta(model.default_sigma(), dt, q, model.obs_spacing()));
                run_magi_hmc(
                    model,
                    &infer.data,
                    cfg.n_steps,
                    beta,
                    kalman,
                    RngKey::new(cfg.seed),
                    cfg.n_warmup,
                    cfg.n_samples,
                    cfg.n_leapfrog.unwrap_or(200),
                )?
            } else {
                let logpost = infer.logpost();
                let opts = HmcOptions {
                    n_warmup: cfg.n_warmup,
                    n_samples: cfg.n_samples,
                    n_leapfrog: cfg.n_leapfrog.unwrap_or(5),
                    init_step_size: 0.02,
                    ..Default::default()
                };
                hmc_chain(RngKey::new(cfg.seed), &logpost, None, &u0, &opts)?
            };
            let rows: Vec<Vec<String>> = chain
                .draws
                .iter()
                .map(|d| d.iter().map(|v| format_field(*v)).collect())
                .collect();
            write_csv(&dir.join("draws.csv"), &names, &rows)?;
            println!(
                "hmc: acceptance={:.3} divergences={}",
                chain.acceptance_rate, chain.divergences
            );
        }
        Sampler::Rwm => {
            let chain = run_marginal_rwm(
                model,
                &infer.data,
                cfg.n_steps,
                kalman,
                RngKey::new(cfg.seed),
                cfg.sigma_rw.unwrap_or(0.05),
                cfg.n_warmup,
                cfg.n_samples,
            )?;
            if chain.all_rejected {
                eprintln!("warning: every proposal was rejected; consider a smaller sigma_rw");
            }
            let rows: Vec<Vec<String>> = chain
                .draws
                .iter()
                .map(|d| d.iter().map(|v| format_field(*v)).collect())
                .collect();
            write_csv(&dir.join("draws.csv"), &names, &rows)?;
            println!("rwm: acceptance={:.3}", chain.acceptance_rate);
        }
    }
    write_manifest(&dir, cfg, start.elapsed().as_secs_f64())?;
    println!("wrote {}", dir.join("manifest.json").display());
    Ok(())
}

fn cmd_benchmark(cfg: &RunConfig, steps: &[usize]) -> Result<()> {
    let model = model_from(cfg)?;
    let interrogation = InterrogationMethod::parse(&cfg.interrogation)?;
    let kalman = parse_kalman(&cfg.kalman_type)?;
    if steps.is_empty() {
        return invalid("n_steps_list: at least one step count is required");
    }
    let dir = ensure_out_dir(cfg)?;
    let theta = model.true_theta();
    let problem = model.problem(&theta)?;
    let (t0, t1) = model.window();
    let field = model.first_order_field(&theta);
    let x0 = model.first_order_init(&theta);

    // ground truth: the closed form where available, otherwise RK4 at 1e5 steps
    let truth: Box<dyn Fn(f64) -> DVector<f64>> = if model == ModelId::Chkrebtii {
        Box::new(|t| DVector::from_row_slice(&[closed_form_chkrebtii(t)]))
    } else {
        let fine = rk4_solve(|x, t| field(x, t), &x0, t0, t1, 100_000)?;
        let dt_fine = (t1 - t0) / 100_000.0;
        let values = fine.values;
        Box::new(move |t| {
            let idx = ((t - t0) / dt_fine).round() as usize;
            values[idx.min(values.len() - 1)].clone()
        })
    };
    let n_cmp = if model == ModelId::Chkrebtii { 1 } else { x0.len() };

    let header: Vec<String> = ["n_steps", "solver_max_err", "euler_max_err", "rk4_max_err", "solver_s", "euler_s", "rk4_s"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for &n in steps {
        let sigma = cfg.sigma.unwrap_or_else(|| model.default_sigma());
        let prior = model.prior(&[sigma], n)?;
        let spec = SolverSpec::new(n, interrogation)
            .with_kalman_type(kalman)
            .with_key(RngKey::new(cfg.seed));
        let t_solver = Instant::now();
        let mv = solve_mv(&problem, &prior, &spec)?;
        let solver_s = t_solver.elapsed().as_secs_f64();
        let t_euler = Instant::now();
        let euler = euler_solve(|x, t| field(x, t), &x0, t0, t1, n)?;
        let euler_s = t_euler.elapsed().as_secs_f64();
        let t_rk4 = Instant::now();
        let rk4 = rk4_solve(|x, t| field(x, t), &x0, t0, t1, n)?;
        let rk4_s = t_rk4.elapsed().as_secs_f64();

        let mut solver_err = 0.0f64;
        let mut euler_err = 0.0f64;
        let mut rk4_err = 0.0f64;
        for step in 0..=n {
            let t = mv.times[step];
            let exact = truth(t);
            for k in 0..n_cmp {
                solver_err = solver_err.max((mv.means[step][(k, 0)] - exact[k]).abs());
                euler_err = euler_err.max((euler.values[step][k] - exact[k]).abs());
                rk4_err = rk4_err.max((rk4.values[step][k] - exact[k]).abs());
            }
        }
        rows.push(vec![
            n.to_string(),
            format_field(solver_err),
            format_field(euler_err),
            format_field(rk4_err),
            format_field(solver_s),
            format_field(euler_s),
            format_field(rk4_s),
        ]);
    }
    let path = dir.join("benchmark.csv");
    write_csv(&path, &header, &rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Run the CLI on the given arguments (excluding the binary name is fine;
/// pass it when present). Returns the process exit code: 0 on success, 1 on
/// configuration errors, 2 on numerical failures.
pub fn cli_run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.cmd {
        Cmd::Solve(args) => load_config(args.config.as_deref()).and_then(|mut cfg| {
            merge_common(&mut cfg, args);
            cmd_solve(&cfg)
        }),
        Cmd::Simulate(args) => load_config(args.config.as_deref()).and_then(|mut cfg| {
            merge_common(&mut cfg, args);
            cmd_simulate(&cfg)
        }),
        Cmd::Infer(args) => load_config(args.common.config.as_deref()).and_then(|mut cfg| {
            merge_common(&mut cfg, &args.common);
            if let Some(v) = &args.method {
                cfg.method = v.clone();
            }
            if let Some(v) = &args.sampler {
                cfg.sampler = v.clone();
            }
            if let Some(v) = args.n_samples {
                cfg.n_samples = v;
            }
            if let Some(v) = args.n_warmup {
                cfg.n_warmup = v;
            }
            if let Some(v) = args.n_leapfrog {
                cfg.n_leapfrog = Some(v);
            }
            if let Some(v) = args.sigma_rw {
                cfg.sigma_rw = Some(v);
            }
            if let Some(v) = args.beta {
                cfg.beta = Some(v);
            }
            if let Some(v) = &args.data {
                cfg.data = Some(v.clone());
            }
            cmd_infer(&cfg)
        }),
        Cmd::Benchmark(args) => load_config(args.common.config.as_deref()).and_then(|mut cfg| {
            merge_common(&mut cfg, &args.common);
            let steps = args.n_steps_list.clone().unwrap_or_else(|| vec![50, 100, 200]);
            cmd_benchmark(&cfg, &steps)
        }),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) | Error::Step { .. } => 2,
                _ => 1,
            }
        }
    }
}
