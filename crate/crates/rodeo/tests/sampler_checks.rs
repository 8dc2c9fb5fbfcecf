//! Sampler checks on known targets: HMC moment recovery and acceptance
//! window on a standard normal, and a short FitzHugh–Nagumo chain smoke.

mod common;

use common::effective_sample_size;
use nalgebra::DVector;
use rodeo::inference::{basic_loglik, ObsModel};
use rodeo::interrogate::InterrogationMethod;
use rodeo::models::{simulate_data, ModelId};
use rodeo::rng::RngKey;
use rodeo::samplers::{hmc_chain, HmcOptions};
use rodeo::solver::SolverSpec;

#[test]
fn hmc_recovers_a_standard_normal() {
    let opts = HmcOptions {
        n_warmup: 500,
        n_samples: 10_000,
        n_leapfrog: 5,
        ..Default::default()
    };
    let r = hmc_chain(
        RngKey::new(12),
        |x: &DVector<f64>| -0.5 * x.norm_squared(),
        None,
        &DVector::from_row_slice(&[1.5]),
        &opts,
    )
    .unwrap();
    assert!(
        (0.6..=0.98).contains(&r.acceptance_rate),
        "acceptance {}",
        r.acceptance_rate
    );
    let xs: Vec<f64> = r.draws.iter().map(|d| d[0]).collect();
    let n_eff = effective_sample_size(&xs);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (xs.len() as f64 - 1.0);
    let se = (var / n_eff).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean {mean} (se {se}, n_eff {n_eff})");
    assert!((var - 1.0).abs() < 0.1, "variance {var}");
    assert_eq!(r.divergences, 0);
}

#[test]
fn hmc_adapts_on_a_correlated_gaussian() {
    // anisotropic target exercises the mass adaptation
    let opts = HmcOptions {
        n_warmup: 600,
        n_samples: 4000,
        n_leapfrog: 8,
        ..Default::default()
    };
    let r = hmc_chain(
        RngKey::new(5),
        |x: &DVector<f64>| -0.5 * (x[0] * x[0] / 25.0 + x[1] * x[1] * 4.0),
        None,
        &DVector::from_row_slice(&[0.0, 0.0]),
        &opts,
    )
    .unwrap();
    assert!((0.5..=0.99).contains(&r.acceptance_rate), "acceptance {}", r.acceptance_rate);
    let mass = r.mass_diag.unwrap();
    // inverse mass approximates the marginal variances (25, 0.25)
    assert!(1.0 / mass[0] > 5.0 * (1.0 / mass[1]), "mass {mass:?}");
    let xs: Vec<f64> = r.draws.iter().map(|d| d[0]).collect();
    let var0 = {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
    };
    assert!((var0 - 25.0).abs() / 25.0 < 0.35, "var {var0}");
}

#[test]
fn hmc_on_fitzhugh_nagumo_basic_likelihood_moves_and_accepts() {
    let model = ModelId::Fitz;
    let theta = model.true_theta();
    let (_t, data) = simulate_data(RngKey::new(3), model, &theta, model.phi()).unwrap();
    let n = 100;
    let obs = ObsModel::Gauss(model.gauss_obs().unwrap());
    let target = move |u: &DVector<f64>| {
        let (th, sig) = model.from_unconstrained(u);
        let lp = model.log_prior(u);
        let problem = match model.problem(&th) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        };
        let prior = match model.prior(&sig, n) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        };
        match basic_loglik(&problem, &prior, &SolverSpec::new(n, InterrogationMethod::Kramer), &obs, &data)
        {
            Ok(v) => lp + v,
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let u0 = model.to_unconstrained(&theta, &[0.1, 0.1]);
    let opts = HmcOptions {
        n_warmup: 150,
        n_samples: 100,
        n_leapfrog: 5,
        init_step_size: 0.02,
        ..Default::default()
    };
    let r = hmc_chain(RngKey::new(8), target, None, &u0, &opts).unwrap();
    assert!(!r.all_rejected);
    assert!(r.acceptance_rate > 0.2, "acceptance {}", r.acceptance_rate);
    // the chain stays in a sane region around the truth
    for d in &r.draws {
        assert!(d.iter().all(|v| v.is_finite()));
        assert!((d[2] - u0[2]).abs() < 1.0, "log c wandered: {} vs {}", d[2], u0[2]);
    }
}
