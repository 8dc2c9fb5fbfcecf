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
        data: data.clone(),
        sigma_override: None,
    };
    let logpost = infer.logpost();
    let u0 = model.to_unconstrained(&theta, &[]);

    // run a few BFGS iterations to get near the mode, then scan the stencil
    let opts = LaplaceOptions { max_iter: 30, grad_tol: 1e30, ..Default::default() };
    // grad_tol huge -> stops immediately? no: amax < tol -> "converged" at iter 1.
    // instead: use moderate iterations and catch the error; we need the mode.
    let _ = opts;
    // reimplement: crude gradient ascent to approximate the mode
    let mut x = u0.clone();
    let mut fx = logpost(&x);
    for _ in 0..40 {
        let g = rodeo::numdiff::fd_grad(&logpost, &x, &rodeo::numdiff::FdConfig::default()).unwrap();
        let mut t = 1.0 / g.amax().max(1.0);
        loop {
            let xn = &x + &g * t;
            let fn_ = logpost(&xn);
            if fn_ > fx {
                x = xn;
                fx = fn_;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                break;
            }
        }
    }
    println!("approx mode lp = {fx}");
    for j in 0..x.len() {
        println!("  u[{j}] = {:+.5} (start {:+.5})", x[j], u0[j]);
    }
    // fd_hess stencil scan
    let cfg = rodeo::numdiff::FdConfig::hessian_default();
    let mut worst: (f64, usize, usize) = (0.0, 0, 0);
    for i in 0..x.len() {
        for j in i..x.len() {
            let hi = 1e-4 * x[i].abs().max(1.0);
            let hj = 1e-4 * x[j].abs().max(1.0);
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut xp = x.clone();
                xp[i] += si * hi;
                xp[j] += sj * hj;
                let v = logpost(&xp);
                if !v.is_finite() || v.abs() > worst.0.abs() {
                    worst = (v, i, j);
                }
            }
        }
    }
    let _ = cfg;
    println!("worst stencil value: {:?}", worst);
}
