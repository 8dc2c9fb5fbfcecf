//! Gaussian Markov process priors for the ODE solution: integrated Brownian
//! motion transition/noise matrices, block-diagonal assembly, and
//! zero-padding helpers for first-order systems.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::block_diag;

/// Vector field f(X, t) over the blocked state (d×q matrix in, d×r matrix out).
pub type StateFn = Arc<dyn Fn(&DMatrix<f64>, f64) -> DMatrix<f64> + Send + Sync>;

/// Full Jacobian ∂vec(f)/∂vec(X) with block-major stacking: rows are the d·r
/// field outputs, columns the d·q state coordinates.
pub type JacFn = Arc<dyn Fn(&DMatrix<f64>, f64) -> DMatrix<f64> + Send + Sync>;

/// Per-variable transition/noise matrices of the solution prior, discretized
/// to a fixed step.
#[derive(Clone)]
pub struct BlockPrior {
    /// Transition matrices Q, one q×q block per variable.
    pub trans: Vec<DMatrix<f64>>,
    /// Process noise R, one q×q PSD block per variable.
    pub noise: Vec<DMatrix<f64>>,
    /// Discretization step the matrices were built for.
    pub dt: f64,
    /// Scale parameters, one per variable.
    pub sigma: Vec<f64>,
}

impl BlockPrior {
    pub fn n_blocks(&self) -> usize {
        self.trans.len()
    }

    pub fn block_dim(&self) -> usize {
        self.trans[0].nrows()
    }

    /// Collapse into a single dense block (for the unblocked solver path).
    pub fn merged(&self) -> BlockPrior {
        let (q, r) = indep_init(&self.trans, &self.noise);
        BlockPrior { trans: vec![q], noise: vec![r], dt: self.dt, sigma: self.sigma.clone() }
    }
}

/// An ODE initial value problem W·X(t) = f(X(t), t), X(t_min) = v in blocked
/// form: one weight block and one state row per system variable.
#[derive(Clone)]
pub struct OdeProblem {
    /// Weight blocks W, r×q each.
    pub weight: Vec<DMatrix<f64>>,
    /// Initial state, d×q (row k = variable k and its derivatives).
    pub init: DMatrix<f64>,
    pub t_min: f64,
    pub t_max: f64,
    pub field: StateFn,
    /// Analytic Jacobian of the field; linearizing interrogations fall back
    /// to finite differences when absent.
    pub jacobian: Option<JacFn>,
    /// Named parameter values, for manifests and diagnostics.
    pub params: BTreeMap<String, f64>,
}

impl OdeProblem {
    pub fn n_vars(&self) -> usize {
        self.weight.len()
    }

    pub fn state_dim(&self) -> usize {
        self.weight[0].ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.weight[0].nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.is_empty() {
            return invalid("problem needs at least one variable block");
        }
        let q = self.state_dim();
        let r = self.obs_dim();
        if r < 1 {
            return invalid("weight blocks need at least one row");
        }
        if self.weight.iter().any(|w| w.ncols() != q || w.nrows() != r) {
            return invalid("weight blocks must share a common shape");
        }
        if self.init.nrows() != self.n_vars() || self.init.ncols() != q {
            return invalid(format!(
                "init must be {}x{}, got {}x{}",
                self.n_vars(),
                q,
                self.init.nrows(),
                self.init.ncols()
            ));
        }
        if !(self.t_min < self.t_max) {
            return invalid(format!("need t_min < t_max, got [{}, {}]", self.t_min, self.t_max));
        }
        if self.init.iter().any(|v| !v.is_finite()) {
            return invalid("init must be finite");
        }
        Ok(())
    }

    /// Merge the d variable blocks into a single dense block (state dim d·q).
    /// The merged field evaluates the original one on the reshaped state.
    pub fn merged(&self) -> OdeProblem {
        let d = self.n_vars();
        let q = self.state_dim();
        let r = self.obs_dim();
        if d == 1 {
            return self.clone();
        }
        let w = block_diag(&self.weight);
        let init = DMatrix::from_fn(1, d * q, |_, j| self.init[(j / q, j % q)]);
        let field = self.field.clone();
        let merged_field: StateFn = Arc::new(move |x: &DMatrix<f64>, t: f64| {
            let xs = DMatrix::from_fn(d, q, |k, j| x[(0, k * q + j)]);
            let f = field(&xs, t);
            DMatrix::from_fn(1, d * r, |_, j| f[(j / r, j % r)])
        });
        let merged_jac = self.jacobian.clone().map(|jac| {
            let j: JacFn = Arc::new(move |x: &DMatrix<f64>, t: f64| {
                let xs = DMatrix::from_fn(d, q, |k, jj| x[(0, k * q + jj)]);
                jac(&xs, t)
            });
            j
        });
        OdeProblem {
            weight: vec![w],
            init,
            t_min: self.t_min,
            t_max: self.t_max,
            field: merged_field,
            jacobian: merged_jac,
            params: self.params.clone(),
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Transition and noise matrices of the once-discretized (q−1)-times
/// integrated Brownian motion prior, one block per entry of `sigma`:
///
/// Q_ij = 1{i≤j} Δt^(j−i)/(j−i)!,
/// R_ij = σ² Δt^(2q−1−i−j) / ((2q−1−i−j)·(q−1−i)!·(q−1−j)!).
pub fn ibm_init(dt: f64, q: usize, sigma: &[f64]) -> Result<BlockPrior> {
    if !(dt > 0.0) {
        return invalid(format!("ibm_init needs dt > 0, got {dt}"));
    }
    if q < 1 {
        return invalid("ibm_init needs q >= 1");
    }
    if sigma.is_empty() {
        return invalid("ibm_init needs at least one sigma");
    }
    if sigma.iter().any(|s| !(*s >= 0.0)) {
        return invalid("ibm_init needs sigma >= 0 elementwise");
    }
    let trans_block = DMatrix::from_fn(q, q, |i, j| {
        if i <= j {
            dt.powi((j - i) as i32) / factorial(j - i)
        } else {
            0.0
        }
    });
    let noise_block = |s: f64| {
        DMatrix::from_fn(q, q, |i, j| {
            let e = 2 * q - 1 - i - j;
            s * s * dt.powi(e as i32) / (e as f64 * factorial(q - 1 - i) * factorial(q - 1 - j))
        })
    };
    Ok(BlockPrior {
        trans: vec![trans_block; sigma.len()],
        noise: sigma.iter().map(|&s| noise_block(s)).collect(),
        dt,
        sigma: sigma.to_vec(),
    })
}

/// Assemble per-variable (Q, R) blocks into densely stored block-diagonal
/// matrices, preserving block order.
pub fn indep_init(trans: &[DMatrix<f64>], noise: &[DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    assert!(!trans.is_empty() && trans.len() == noise.len(), "indep_init needs matching non-empty block lists");
    (block_diag(trans), block_diag(noise))
}

/// Zero-pad a first-order vector field g(x, t) (d values in, d derivatives
/// out) to the q-column blocked layout: each weight block selects the first
/// derivative, and the padded field reads column 0 only.
pub fn first_order_pad<F>(g: F, n_vars: usize, n_deriv: usize) -> Result<(Vec<DMatrix<f64>>, StateFn)>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
{
    if n_deriv < 2 {
        return invalid("first_order_pad needs q >= 2 (value and first derivative)");
    }
    if n_vars < 1 {
        return invalid("first_order_pad needs at least one variable");
    }
    let mut w = DMatrix::zeros(1, n_deriv);
    w[(0, 1)] = 1.0;
    let weights = vec![w; n_vars];
    let field: StateFn = Arc::new(move |x: &DMatrix<f64>, t: f64| {
        let vals = DVector::from_fn(n_vars, |k, _| x[(k, 0)]);
        let dx = g(&vals, t);
        DMatrix::from_fn(n_vars, 1, |k, _| dx[k])
    });
    Ok((weights, field))
}

/// Copy known derivative values into a d×q state, zero-filling the rest.
pub fn pad_init(values: &DMatrix<f64>, q: usize) -> Result<DMatrix<f64>> {
    let (d, p) = (values.nrows(), values.ncols());
    if p > q {
        return invalid(format!("pad_init: {p} known derivatives exceed q = {q}"));
    }
    let mut out = DMatrix::zeros(d, q);
    out.view_mut((0, 0), (d, p)).copy_from(values);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ibm_q1_unit() {
        let p = ibm_init(1.0, 1, &[1.0]).unwrap();
        assert_eq!(p.trans[0], DMatrix::from_row_slice(1, 1, &[1.0]));
        assert_eq!(p.noise[0], DMatrix::from_row_slice(1, 1, &[1.0]));
    }

    #[test]
    fn ibm_q2_unit() {
        let p = ibm_init(1.0, 2, &[1.0]).unwrap();
        assert_relative_eq!(p.trans[0], DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        assert_relative_eq!(
            p.noise[0],
            DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 0.5, 0.5, 1.0]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn ibm_sigma_zero_gives_zero_noise() {
        let p = ibm_init(0.5, 3, &[0.0]).unwrap();
        assert_eq!(p.noise[0], DMatrix::zeros(3, 3));
        let p1 = ibm_init(0.5, 3, &[1.0]).unwrap();
        assert_eq!(p.trans[0], p1.trans[0]);
    }

    #[test]
    fn ibm_noise_scales_as_sigma_squared_and_trans_is_free_of_sigma() {
        let a = ibm_init(0.25, 4, &[0.3]).unwrap();
        let b = ibm_init(0.25, 4, &[0.6]).unwrap();
        assert_relative_eq!(&b.noise[0] * 1.0, &a.noise[0] * 4.0, epsilon = 1e-14);
        assert_eq!(a.trans[0], b.trans[0]);
    }

    #[test]
    fn ibm_rejects_bad_arguments() {
        assert!(ibm_init(0.0, 2, &[1.0]).is_err());
        assert!(ibm_init(-1.0, 2, &[1.0]).is_err());
        assert!(ibm_init(1.0, 2, &[-0.1]).is_err());
        assert!(ibm_init(1.0, 2, &[]).is_err());
    }

    #[test]
    fn ibm_markov_semigroup_property() {
        // Q(2dt) = Q(dt)^2, R(2dt) = Q(dt) R(dt) Q(dt)' + R(dt)
        for q in 1..=6usize {
            for &dt in &[1e-3, 0.1, 1.0, 3.0] {
                let one = ibm_init(dt, q, &[0.7]).unwrap();
                let two = ibm_init(2.0 * dt, q, &[0.7]).unwrap();
                let q1 = &one.trans[0];
                let qq = q1 * q1;
                let rr = q1 * &one.noise[0] * q1.transpose() + &one.noise[0];
                let scale = two.noise[0].amax().max(1e-300);
                assert!((&two.trans[0] - &qq).amax() / two.trans[0].amax() < 1e-12);
                assert!(
                    (&two.noise[0] - &rr).amax() / scale < 1e-12,
                    "q={q} dt={dt}: {}",
                    (&two.noise[0] - &rr).amax() / scale
                );
            }
        }
    }

    #[test]
    fn ibm_noise_is_psd_on_a_grid() {
        for q in 1..=6usize {
            for &dt in &[1e-4, 1e-2, 0.5, 1.0, 10.0] {
                let p = ibm_init(dt, q, &[0.1]).unwrap();
                let eig = p.noise[0].clone().symmetric_eigenvalues();
                let floor = -1e-10 * p.noise[0].trace();
                assert!(eig.iter().all(|&e| e >= floor), "q={q} dt={dt} eig {eig:?}");
            }
        }
    }

    #[test]
    fn indep_init_assembles_block_diagonals() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let (q, _r) = indep_init(&[a.clone(), b], &[a.clone(), a.clone()]);
        assert_eq!(q.nrows(), 4);
        assert_eq!(q[(0, 1)], 2.0);
        assert_eq!(q[(2, 3)], 6.0);
        assert_eq!(q[(0, 2)], 0.0);
        // single block passes through unchanged
        let (q1, r1) = indep_init(&[a.clone()], &[a.clone()]);
        assert_eq!(q1, a);
        assert_eq!(r1, a);
    }

    #[test]
    fn first_order_pad_builds_selection_weights() {
        let (w, field) = first_order_pad(|x: &DVector<f64>, _t| -x.clone(), 2, 3).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0], DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]));
        // padded field ignores derivative columns
        let x = DMatrix::from_row_slice(2, 3, &[2.0, 9.0, 9.0, -1.0, 9.0, 9.0]);
        let f = field(&x, 0.0);
        assert_eq!(f, DMatrix::from_row_slice(2, 1, &[-2.0, 1.0]));
        assert!(first_order_pad(|x: &DVector<f64>, _t| x.clone(), 2, 1).is_err());
    }

    #[test]
    fn pad_init_zero_fills() {
        let v = DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 1.0]);
        let p = pad_init(&v, 4).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(1, 4, &[-1.0, 0.0, 1.0, 0.0]));
        // p == q is the identity
        let same = pad_init(&v, 3).unwrap();
        assert_eq!(same, v);
        assert!(pad_init(&v, 2).is_err());
    }
}
