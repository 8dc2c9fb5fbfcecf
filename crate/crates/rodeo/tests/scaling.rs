//! Runtime-scaling checks, kept in their own test binary so wall-clock
//! measurements do not race the rest of the suite.

use rodeo::interrogate::InterrogationMethod;
use rodeo::models::ModelId;
use rodeo::solver::{solve_mv, SolverSpec};

fn min_time<F: FnMut()>(mut f: F, reps: usize) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let t0 = std::time::Instant::now();
        f();
        best = best.min(t0.elapsed().as_secs_f64());
    }
    best
}

#[test]
fn runtime_scales_linearly_in_n() {
    let model = ModelId::Fitz;
    let problem = model.problem(&model.true_theta()).unwrap();
    let mut time_one = |n: usize| {
        let prior = model.prior(&[0.1], n).unwrap();
        let spec = SolverSpec::new(n, InterrogationMethod::Kramer);
        min_time(
            || {
                let mv = solve_mv(&problem, &prior, &spec).unwrap();
                assert!(mv.means[n][(0, 0)].is_finite());
            },
            5,
        )
    };
    let t1 = time_one(4000);
    let t2 = time_one(16000);
    let slope = (t2 / t1).log2() / 2.0;
    assert!(
        (0.8..1.3).contains(&slope),
        "log-time slope vs log-N outside the linear window: {slope} (t1={t1}, t2={t2})"
    );
}
