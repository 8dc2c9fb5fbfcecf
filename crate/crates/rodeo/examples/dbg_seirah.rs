use nalgebra::DVector;
use rodeo::cli::{InferProblem, Method};
use rodeo::interrogate::InterrogationMethod;
use rodeo::kalman::KalmanType;
use rodeo::models::{simulate_data, ModelId};
use rodeo::rng::RngKey;

fn main() {
    let model = ModelId::Seirah;
    let theta = model.true_theta();
    let key = RngKey::new(0).split(0xDA7A);
    let (_t, data) = simulate_data(key, model, &theta, 0.0).unwrap();
    println!("first obs: {:?} {:?}", data[0], data[1]);
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
    let base = logpost(&u0);
    println!("logpost at truth: {base}");
    for j in 0..u0.len() {
        for h in [1e-5, 1e-4, 1e-3, 1e-2] {
            let mut up = u0.clone();
            up[j] += h;
            let vp = logpost(&up);
            up[j] = u0[j] - h;
            let vm = logpost(&up);
            print!("  j={j} h={h:.0e}: d+={:+.4e} d-={:+.4e}", vp - base, vm - base);
        }
        println!();
    }
}
