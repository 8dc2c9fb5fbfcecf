use nalgebra::DVector;
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
    let infer = InferProblem {
        model,
        method: Method::DaltonNg,
        n_steps: 600,
        interrogation: InterrogationMethod::Kramer,
        kalman_type: KalmanType::Standard,
        data,
        sigma_override: None,
    };
    let logpost = infer.logpost();
    let u0 = model.to_unconstrained(&theta, &[]);
    let opts = LaplaceOptions { max_iter: 60, ..Default::default() };
    match laplace_fit(&logpost, None, &u0, &opts) {
        Ok(fit) => {
            println!("converged={} iters={} lp={}", fit.converged, fit.n_iter, fit.logpost_at_mode);
            for j in 0..u0.len() {
                println!("  u[{j}] = {:+.4} (start {:+.4}) sd {:.4}", fit.mode[j], u0[j], fit.sd(j));
            }
        }
        Err(e) => {
            println!("laplace failed: {e}");
            // find the best iterate by a crude refit with fewer iterations
            for max_iter in [5, 10, 20, 40] {
                let opts = LaplaceOptions { max_iter, ..Default::default() };
                match laplace_fit(&logpost, None, &u0, &opts) {
                    Ok(fit) => println!("  max_iter={max_iter}: lp={} mode={:?}", fit.logpost_at_mode, fit.mode.as_slice()),
                    Err(e2) => {
                        // evaluate the objective along the optimizer's path is not
                        // accessible; at least evaluate around u0
                        println!("  max_iter={max_iter}: {e2}");
                    }
                }
            }
            let probe = |label: &str, u: &DVector<f64>| {
                println!("  {label}: lp={}", logpost(u));
            };
            probe("u0", &u0);
        }
    }
}
