//! Deterministic reference solvers: forward Euler and classical fixed-step
//! RK4. Used for comparison tables and as trajectory oracles in tests.

use nalgebra::DVector;

use crate::error::{invalid, numerical, Result};

/// A deterministic trajectory on a uniform grid.
#[derive(Debug, Clone)]
pub struct DetSolution {
    pub grid: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl DetSolution {
    pub fn n_steps(&self) -> usize {
        self.grid.len() - 1
    }
}

fn check_finite(x: &DVector<f64>, t: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return numerical(format!("field returned non-finite values at t = {t}"));
    }
    Ok(())
}

fn grid(t_min: f64, t_max: f64, n: usize) -> Result<(Vec<f64>, f64)> {
    if n < 1 {
        return invalid("need at least one step");
    }
    if !(t_min < t_max) {
        return invalid("need t_min < t_max");
    }
    let dt = (t_max - t_min) / n as f64;
    Ok(((0..=n).map(|i| t_min + i as f64 * dt).collect(), dt))
}

/// Forward Euler: x_{n+1} = x_n + g(x_n, t_n)·Δt.
pub fn euler_solve<G>(g: G, x0: &DVector<f64>, t_min: f64, t_max: f64, n: usize) -> Result<DetSolution>
where
    G: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    let (grid, dt) = grid(t_min, t_max, n)?;
    let mut values = Vec::with_capacity(n + 1);
    values.push(x0.clone());
    for i in 0..n {
        let t = grid[i];
        let dx = g(&values[i], t);
        check_finite(&dx, t)?;
        values.push(&values[i] + dx * dt);
    }
    Ok(DetSolution { grid, values })
}

/// Classical 4-stage Runge–Kutta with fixed step.
pub fn rk4_solve<G>(g: G, x0: &DVector<f64>, t_min: f64, t_max: f64, n: usize) -> Result<DetSolution>
where
    G: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    let (grid, dt) = grid(t_min, t_max, n)?;
    let mut values = Vec::with_capacity(n + 1);
    values.push(x0.clone());
    for i in 0..n {
        let t = grid[i];
        let x = &values[i];
        let k1 = g(x, t);
        let k2 = g(&(x + &k1 * (dt / 2.0)), t + dt / 2.0);
        let k3 = g(&(x + &k2 * (dt / 2.0)), t + dt / 2.0);
        let k4 = g(&(x + &k3 * dt), t + dt);
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        check_finite(&next, t)?;
        values.push(next);
    }
    Ok(DetSolution { grid, values })
}
