//! Laplace approximation: quasi-Newton maximization of a log-posterior and
//! a Gaussian approximation N(Θ̂, V̂) with V̂ the inverse negative Hessian at
//! the mode, optionally restricted to a coordinate sub-block.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numerical, Result};
use crate::linalg;
use crate::numdiff::{fd_grad, fd_hess, FdConfig};

#[derive(Debug, Clone)]
pub struct LaplaceOptions {
    pub max_iter: usize,
    /// Stop when the gradient sup-norm falls below this.
    pub grad_tol: f64,
    pub fd: FdConfig,
    pub hess_fd: FdConfig,
    /// Restrict the posterior covariance to these coordinates (the Hessian is
    /// taken only in this sub-block). Defaults to all coordinates.
    pub cov_indices: Option<Vec<usize>>,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        LaplaceOptions {
            max_iter: 200,
            grad_tol: 1e-6,
            fd: FdConfig::default(),
            hess_fd: FdConfig::hessian_default(),
            cov_indices: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LaplaceResult {
    pub mode: DVector<f64>,
    /// Posterior covariance of the selected coordinates.
    pub cov: DMatrix<f64>,
    pub converged: bool,
    pub n_iter: usize,
    pub logpost_at_mode: f64,
    /// Coordinates the covariance refers to.
    pub cov_indices: Vec<usize>,
}

impl LaplaceResult {
    /// Posterior standard deviation of covariance coordinate `j`.
    pub fn sd(&self, j: usize) -> f64 {
        self.cov[(j, j)].max(0.0).sqrt()
    }
}

/// Maximize `logpost` from `theta0` by damped BFGS with backtracking line
/// search, then invert the negative Hessian at the mode.
pub fn laplace_fit<F>(
    logpost: F,
    grad: Option<&dyn Fn(&DVector<f64>) -> DVector<f64>>,
    theta0: &DVector<f64>,
    opts: &LaplaceOptions,
) -> Result<LaplaceResult>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let dim = theta0.len();
    if dim == 0 {
        return invalid("laplace_fit needs at least one coordinate");
    }
    let f = |x: &DVector<f64>| -logpost(x);
    let g = |x: &DVector<f64>| -> Result<DVector<f64>> {
        match grad {
            Some(gf) => Ok(-gf(x)),
            None => fd_grad(&f, x, &opts.fd),
        }
    };

    let mut x = theta0.clone();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return invalid("log-posterior is not finite at the starting point");
    }
    let mut gx = g(&x)?;
    let mut hinv = DMatrix::identity(dim, dim);
    let mut converged = false;
    let mut n_iter = 0;

    for iter in 0..opts.max_iter {
        n_iter = iter + 1;
        if gx.amax() < opts.grad_tol {
            converged = true;
            break;
        }
        let mut dir = -(&hinv * &gx);
        let mut slope = dir.dot(&gx);
        if !(slope < 0.0) {
            // curvature estimate went bad; restart from steepest descent
            hinv = DMatrix::identity(dim, dim);
            dir = -gx.clone();
            slope = dir.dot(&gx);
        }
        let mut t = 1.0;
        let mut x_new;
        let mut f_new;
        loop {
            x_new = &x + &dir * t;
            f_new = f(&x_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * t * slope {
                break;
            }
            t *= 0.5;
            if t < 1e-14 {
                break;
            }
        }
        if t < 1e-14 {
            // no progress possible along this direction
            break;
        }
        let g_new = g(&x_new)?;
        let s = &x_new - &x;
        let y = &g_new - &gx;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::identity(dim, dim);
            let left = &i - rho * &s * y.transpose();
            hinv = &left * hinv * left.transpose() + rho * &s * s.transpose();
        }
        x = x_new;
        fx = f_new;
        gx = g_new;
    }

    let idx: Vec<usize> = opts.cov_indices.clone().unwrap_or_else(|| (0..dim).collect());
    if idx.iter().any(|&j| j >= dim) {
        return invalid("cov_indices out of range");
    }
    // Hessian of -logpost in the selected sub-block only
    let xm = x.clone();
    let sub_f = |v: &DVector<f64>| {
        let mut full = xm.clone();
        for (j, &c) in idx.iter().enumerate() {
            full[c] = v[j];
        }
        f(&full)
    };
    let x_sub = DVector::from_fn(idx.len(), |j, _| x[idx[j]]);
    let hess = fd_hess(sub_f, &x_sub, &opts.hess_fd)?;
    let eig = hess.clone().symmetric_eigenvalues();
    let min_eig = eig.min();
    if min_eig <= 0.0 {
        return numerical(format!(
            "negative Hessian at the mode is not positive definite (eigenvalue {min_eig:.6e})"
        ));
    }
    let chol = linalg::chol_psd(&hess, "negative Hessian at the mode")?;
    let cov = linalg::symmetrize(&chol.inverse());

    Ok(LaplaceResult {
        mode: x,
        cov,
        converged,
        n_iter,
        logpost_at_mode: -fx,
        cov_indices: idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::rng::RngKey;

    #[test]
    fn quadratic_objective_converges_immediately() {
        let m = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let mm = m.clone();
        let r = laplace_fit(
            move |x: &DVector<f64>| -0.5 * (x - &mm).norm_squared(),
            None,
            &DVector::zeros(3),
            &LaplaceOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.n_iter <= 5, "took {} iterations", r.n_iter);
        assert_relative_eq!(r.mode, m, epsilon = 1e-6);
        assert_relative_eq!(r.cov, DMatrix::identity(3, 3), epsilon = 1e-5);
    }

    #[test]
    fn gaussian_covariance_is_precision_inverse() {
        let a = RngKey::new(3).normal_matrix(4, 4);
        let p = &a * a.transpose() + DMatrix::identity(4, 4);
        let pc = p.clone();
        let m = DVector::from_row_slice(&[0.3, -0.1, 0.8, 0.0]);
        let mm = m.clone();
        let r = laplace_fit(
            move |x: &DVector<f64>| {
                let d = x - &mm;
                -0.5 * (d.transpose() * &pc * &d)[(0, 0)]
            },
            None,
            &DVector::zeros(4),
            &LaplaceOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        let p_inv = p.try_inverse().unwrap();
        assert_relative_eq!(r.mode, m, epsilon = 1e-5);
        assert_relative_eq!(r.cov, crate::linalg::symmetrize(&p_inv), epsilon = 1e-4);
    }

    #[test]
    fn sub_block_covariance_selects_coordinates() {
        let r = laplace_fit(
            |x: &DVector<f64>| -0.5 * x[0] * x[0] - 0.25 * x[1] * x[1] - x[2] * x[2],
            None,
            &DVector::from_row_slice(&[1.0, 1.0, 1.0]),
            &LaplaceOptions { cov_indices: Some(vec![0, 1]), ..Default::default() },
        )
        .unwrap();
        assert_eq!(r.cov.nrows(), 2);
        assert_relative_eq!(r.cov[(0, 0)], 1.0, epsilon = 1e-4);
        assert_relative_eq!(r.cov[(1, 1)], 2.0, epsilon = 1e-4);
    }

    #[test]
    fn mode_and_cov_are_permutation_invariant() {
        let obj = |x: &DVector<f64>| {
            -0.5 * (x[0] - 1.0).powi(2) - 0.35 * (x[1] + 0.5).powi(2)
                - 0.2 * (x[2] - 2.0).powi(2)
                - 0.1 * x[0] * x[1]
        };
        let r = laplace_fit(obj, None, &DVector::zeros(3), &LaplaceOptions::default()).unwrap();
        // permuted coordinates: swap 0 and 2
        let obj_p = move |x: &DVector<f64>| {
            let y = DVector::from_row_slice(&[x[2], x[1], x[0]]);
            obj(&y)
        };
        let rp = laplace_fit(obj_p, None, &DVector::zeros(3), &LaplaceOptions::default()).unwrap();
        assert_relative_eq!(r.mode[0], rp.mode[2], epsilon = 1e-6);
        assert_relative_eq!(r.mode[2], rp.mode[0], epsilon = 1e-6);
        assert_relative_eq!(r.cov[(0, 0)], rp.cov[(2, 2)], epsilon = 1e-6);
        assert_relative_eq!(r.cov[(0, 1)], rp.cov[(2, 1)], epsilon = 1e-6);
    }

    #[test]
    fn saddle_reports_offending_eigenvalue() {
        // maximum in x0, minimum in x1: Hessian of -logpost is indefinite
        let r = laplace_fit(
            |x: &DVector<f64>| -0.5 * x[0] * x[0] + 0.5 * x[1] * x[1],
            None,
            &DVector::from_row_slice(&[0.0, 0.0]),
            &LaplaceOptions { max_iter: 0, ..Default::default() },
        );
        let msg = r.unwrap_err().to_string();
        assert!(msg.contains("eigenvalue"), "{msg}");
    }

    #[test]
    fn non_finite_start_is_invalid() {
        let r = laplace_fit(
            |x: &DVector<f64>| if x[0] > 0.0 { -x[0] } else { f64::NEG_INFINITY },
            None,
            &DVector::from_row_slice(&[-1.0]),
            &LaplaceOptions::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn analytic_gradient_is_honored() {
        let m = DVector::from_row_slice(&[2.0, -1.0]);
        let mm = m.clone();
        let grad = move |x: &DVector<f64>| -(x - &mm);
        let mm2 = m.clone();
        let r = laplace_fit(
            move |x: &DVector<f64>| -0.5 * (x - &mm2).norm_squared(),
            Some(&grad),
            &DVector::zeros(2),
            &LaplaceOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.mode, m, epsilon = 1e-8);
    }
}
