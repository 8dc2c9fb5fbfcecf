use rodeo::cli::{InferProblem, Method};
use rodeo::interrogate::InterrogationMethod;
use rodeo::kalman::KalmanType;
use rodeo::models::{simulate_data, ModelId};
use rodeo::rng::RngKey;
use rodeo::samplers::{laplace_fit, LaplaceOptions};

fn main() {
    let model = ModelId::Seirah;
    let theta = model.true_theta();
    let key = RngKey::new(0).split(0xDA7A);
    let (_t, data) = simulate_data(key, model, &theta, 0.0).unwrap();
    for (sigma, kind) in [
        (1e2, KalmanType::SquareRoot),
        (1e4, KalmanType::Standard),
        (1e4, KalmanType::SquareRoot),
        (1e6, KalmanType::Standard),
        (1e6, KalmanType::SquareRoot),
    ] {
        let infer = InferProblem {
            model,
            method: Method::DaltonNg,
            n_steps: 600,
            interrogation: InterrogationMethod::Kramer,
            kalman_type: kind,
            data: data.clone(),
            sigma_override: Some(sigma),
        };
        let logpost = infer.logpost();
        let u0 = model.to_unconstrained(&theta, &[]);
        let t0 = std::time::Instant::now();
        match laplace_fit(&logpost, None, &u0, &LaplaceOptions::default()) {
            Ok(fit) => {
                let names = model.unconstrained_names();
                let mut cover = true;
                let mut worst = 0.0f64;
                for j in 0..u0.len() {
                    let z = (fit.mode[j] - u0[j]).abs() / fit.sd(j).max(1e-300);
                    worst = worst.max(z);
                    if z > 3.0 { cover = false; }
                }
                println!(
                    "sigma={sigma:.0e} {kind:?}: converged={} iters={} worst|z|={worst:.2} cover3sd={cover} ({:.1}s)",
                    fit.converged, fit.n_iter, t0.elapsed().as_secs_f64()
                );
                if !cover {
                    for j in 0..u0.len() {
                        println!("   {}: mode {:+.4} truth {:+.4} sd {:.4}", names[j], fit.mode[j], u0[j], fit.sd(j));
                    }
                }
            }
            Err(e) => println!("sigma={sigma:.0e} {kind:?}: FAILED {e} ({:.1}s)", t0.elapsed().as_secs_f64()),
        }
    }
}
