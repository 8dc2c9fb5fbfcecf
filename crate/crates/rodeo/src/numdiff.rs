//! Central finite differences: gradients, Jacobians, and Hessians.
//!
//! These fulfil the differentiation contract used by the linearizing
//! interrogations, the Laplace approximation, and the gradient-based
//! samplers whenever no analytic derivative is supplied.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numerical, Result};

/// Finite-difference configuration. Step for coordinate j is
/// `rel_step * max(1, |x_j|)`.
#[derive(Debug, Clone, Copy)]
pub struct FdConfig {
    pub rel_step: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig { rel_step: 1e-6 }
    }
}

impl FdConfig {
    pub fn new(rel_step: f64) -> Result<Self> {
        if !(rel_step > 0.0 && rel_step <= 1e-2) {
            return invalid(format!("rel_step must be in (0, 1e-2], got {rel_step}"));
        }
        Ok(FdConfig { rel_step })
    }

    /// Wider default step for second differences, where the 1e-6 first-order
    /// default would lose most significant digits to cancellation.
    pub fn hessian_default() -> Self {
        FdConfig { rel_step: 1e-4 }
    }

    fn step(&self, x: f64) -> f64 {
        self.rel_step * x.abs().max(1.0)
    }
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        numerical(format!("{what} returned a non-finite value ({v})"))
    }
}

/// Central-difference gradient of a scalar function.
pub fn fd_grad<F>(f: F, x: &DVector<f64>, cfg: &FdConfig) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = cfg.step(x[j]);
        xp[j] = x[j] + h;
        let fp = check_finite(f(&xp), "fd_grad objective")?;
        xp[j] = x[j] - h;
        let fm = check_finite(f(&xp), "fd_grad objective")?;
        xp[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Column-wise central-difference Jacobian of a vector function.
pub fn fd_jac<F>(f: F, x: &DVector<f64>, cfg: &FdConfig) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut xp = x.clone();
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..n {
        let h = cfg.step(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        let col = (fp - fm) / (2.0 * h);
        for v in col.iter() {
            check_finite(*v, "fd_jac field")?;
        }
        let m = jac.get_or_insert_with(|| DMatrix::zeros(col.len(), n));
        m.set_column(j, &col);
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(f(x).len(), 0)))
}

/// Symmetric central second differences; the output is symmetrized exactly.
pub fn fd_hess<F>(f: F, x: &DVector<f64>, cfg: &FdConfig) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x.len();
    let f0 = check_finite(f(x), "fd_hess objective")?;
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    let steps: Vec<f64> = (0..n).map(|j| cfg.step(x[j])).collect();
    for i in 0..n {
        let hi = steps[i];
        xp[i] = x[i] + hi;
        let fp = check_finite(f(&xp), "fd_hess objective")?;
        xp[i] = x[i] - hi;
        let fm = check_finite(f(&xp), "fd_hess objective")?;
        xp[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in (i + 1)..n {
            let hj = steps[j];
            xp[i] = x[i] + hi;
            xp[j] = x[j] + hj;
            let fpp = check_finite(f(&xp), "fd_hess objective")?;
            xp[j] = x[j] - hj;
            let fpm = check_finite(f(&xp), "fd_hess objective")?;
            xp[i] = x[i] - hi;
            let fmm = check_finite(f(&xp), "fd_hess objective")?;
            xp[j] = x[j] + hj;
            let fmp = check_finite(f(&xp), "fd_hess objective")?;
            xp[i] = x[i];
            xp[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grad_of_half_norm_squared_is_x() {
        let x = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let g = fd_grad(|v| 0.5 * v.norm_squared(), &x, &FdConfig::default()).unwrap();
        assert_relative_eq!(g, x, epsilon = 1e-8);
    }

    #[test]
    fn grad_of_sin_is_cos() {
        let x = DVector::from_row_slice(&[0.7]);
        let g = fd_grad(|v| v[0].sin(), &x, &FdConfig::default()).unwrap();
        assert!((g[0] - 0.7f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let x = DVector::from_row_slice(&[0.4, -2.0]);
        let g = fd_grad(|_| 3.25, &x, &FdConfig::default()).unwrap();
        assert_eq!(g, DVector::zeros(2));
    }

    #[test]
    fn jac_of_linear_map_is_the_matrix() {
        let lambda = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 2.0, 0.5]);
        let x = DVector::from_row_slice(&[1.0, -0.5]);
        let j = fd_jac(|v| &lambda * v, &x, &FdConfig::default()).unwrap();
        assert_relative_eq!(j, lambda, epsilon = 1e-9);
    }

    #[test]
    fn jac_of_identity() {
        let x = DVector::from_row_slice(&[2.0, 3.0, -1.0]);
        let j = fd_jac(|v| v.clone(), &x, &FdConfig::default()).unwrap();
        assert_relative_eq!(j, DMatrix::identity(3, 3), epsilon = 1e-9);
    }

    #[test]
    fn hess_of_quadratic_is_the_matrix() {
        let p = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 3.0]);
        let x = DVector::from_row_slice(&[0.2, -1.0, 0.5]);
        let h = fd_hess(
            |v| 0.5 * (v.transpose() * &p * v)[(0, 0)],
            &x,
            &FdConfig::hessian_default(),
        )
        .unwrap();
        assert_relative_eq!(h, p, epsilon = 1e-5);
    }

    #[test]
    fn hess_of_quartic_scalar() {
        let x = DVector::from_row_slice(&[1.0]);
        let h = fd_hess(|v| v[0].powi(4), &x, &FdConfig::hessian_default()).unwrap();
        assert!((h[(0, 0)] - 12.0).abs() < 1e-4, "{}", h[(0, 0)]);
    }

    #[test]
    fn hess_of_linear_is_zero() {
        let x = DVector::from_row_slice(&[0.3, 0.7]);
        let h = fd_hess(|v| 2.0 * v[0] - v[1], &x, &FdConfig::hessian_default()).unwrap();
        assert!(h.amax() < 1e-7);
    }

    #[test]
    fn hess_agrees_with_jac_of_grad() {
        let f = |v: &DVector<f64>| (v[0] * v[1]).sin() + v[0].powi(3);
        let x = DVector::from_row_slice(&[0.6, -0.4]);
        let h = fd_hess(f, &x, &FdConfig::hessian_default()).unwrap();
        let jg = fd_jac(
            |v| fd_grad(f, v, &FdConfig::default()).unwrap(),
            &x,
            &FdConfig::hessian_default(),
        )
        .unwrap();
        assert_relative_eq!(h, crate::linalg::symmetrize(&jg), epsilon = 1e-4);
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = DVector::from_row_slice(&[0.0]);
        let r = fd_grad(|v| if v[0] > 0.0 { f64::NAN } else { 0.0 }, &x, &FdConfig::default());
        assert!(r.is_err());
    }
}
