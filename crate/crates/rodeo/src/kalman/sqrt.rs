//! Square-root Kalman recursions propagating lower-triangular covariance
//! factors. Every covariance-shaped output is produced by QR
//! re-triangularization of a stacked pre-array, never by subtraction.

use nalgebra::{DMatrix, DVector};

use crate::error::{numerical, Result};
use crate::linalg::{self, hstack, tria, vstack};

pub fn predict(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    drift: &DVector<f64>,
    trans: &DMatrix<f64>,
    noise_factor: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let m = trans * mean + drift;
    let l = tria(&hstack(&(trans * factor), noise_factor));
    (m, l)
}

fn informative_rows(w: &DMatrix<f64>, v: &DMatrix<f64>) -> Vec<usize> {
    (0..w.nrows())
        .filter(|&i| w.row(i).iter().any(|x| *x != 0.0) || v[(i, i)] != 0.0)
        .collect()
}

/// Solve X·L = B for X with L lower triangular (right division).
fn solve_right_lower(l: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    match l.transpose().solve_upper_triangular(&b.transpose()) {
        Some(x) => Ok(x.transpose()),
        None => numerical(format!("{what}: singular triangular factor")),
    }
}

/// Array-form measurement update: one QR of
/// `[L_V  W·L; 0  L]` yields the innovation factor, the gain, and the
/// updated state factor simultaneously.
pub fn update(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    z: &DVector<f64>,
    a: &DVector<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let rows = informative_rows(w, v);
    if rows.is_empty() {
        return Ok((mean.clone(), factor.clone()));
    }
    let (z, a, w, v) = if rows.len() == z.len() {
        (z.clone(), a.clone(), w.clone(), v.clone())
    } else {
        (
            linalg::gather_vec(z, &rows),
            linalg::gather_vec(a, &rows),
            linalg::gather_rows(w, &rows),
            linalg::gather_mat(v, &rows, &rows),
        )
    };
    let p = mean.len();
    let r = z.len();
    let lv = linalg::psd_factor(&v, "update observation noise")?;
    let top = hstack(&lv, &(&w * factor));
    let bottom = hstack(&DMatrix::zeros(p, r), factor);
    let post = tria(&vstack(&top, &bottom));
    let b11 = post.view((0, 0), (r, r)).into_owned();
    let b21 = post.view((r, 0), (p, r)).into_owned();
    let b22 = post.view((r, r), (p, p)).into_owned();
    let gain = solve_right_lower(&b11, &b21, "update innovation covariance")?;
    let resid = z - &w * mean - a;
    Ok((mean + &gain * resid, b22))
}

/// QR of the joint pre-array `[Q·L_f  L_R; L_f  0]`, giving the predicted
/// factor, the smoother gain, and the backward conditional factor.
fn backward_arrays(
    filt_factor: &DMatrix<f64>,
    trans: &DMatrix<f64>,
    noise_factor: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = filt_factor.nrows();
    let top = hstack(&(trans * filt_factor), noise_factor);
    let bottom = hstack(filt_factor, &DMatrix::zeros(p, p));
    let post = tria(&vstack(&top, &bottom));
    let b11 = post.view((0, 0), (p, p)).into_owned();
    let b21 = post.view((p, 0), (p, p)).into_owned();
    let b22 = post.view((p, p), (p, p)).into_owned();
    let gain = solve_right_lower(&b11, &b21, "smoother predicted covariance")?;
    Ok((gain, b22))
}

pub fn smooth(
    next_smoothed: (&DVector<f64>, &DMatrix<f64>),
    filtered: (&DVector<f64>, &DMatrix<f64>),
    pred_mean: &DVector<f64>,
    trans: &DMatrix<f64>,
    noise_factor: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (gain, cond_factor) = backward_arrays(filtered.1, trans, noise_factor)?;
    let m = filtered.0 + &gain * (next_smoothed.0 - pred_mean);
    let l = tria(&hstack(&cond_factor, &(&gain * next_smoothed.1)));
    Ok((m, l))
}

pub fn backward_params(
    x_next: &DVector<f64>,
    filtered: (&DVector<f64>, &DMatrix<f64>),
    pred_mean: &DVector<f64>,
    trans: &DMatrix<f64>,
    noise_factor: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (gain, cond_factor) = backward_arrays(filtered.1, trans, noise_factor)?;
    let m = filtered.0 + &gain * (x_next - pred_mean);
    Ok((m, cond_factor))
}

pub fn forecast(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    a: &DVector<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = w * mean + a;
    let lv = linalg::psd_factor(v, "forecast observation noise")?;
    let l = tria(&hstack(&(w * factor), &lv));
    Ok((m, l))
}

pub fn condition(
    filtered: (&DVector<f64>, &DMatrix<f64>),
    pred_mean: &DVector<f64>,
    trans: &DMatrix<f64>,
    noise_factor: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (gain, cond_factor) = backward_arrays(filtered.1, trans, noise_factor)?;
    let offset = filtered.0 - &gain * pred_mean;
    Ok((gain, offset, cond_factor))
}

/// Gaussian log-density with a factored covariance. Falls back to the dense
/// path when the factor is rank-deficient (masked or degenerate dimensions).
pub fn logpdf_factor(x: &DVector<f64>, mean: &DVector<f64>, factor: &DMatrix<f64>) -> Result<f64> {
    let p = x.len();
    if p == 0 {
        return Ok(0.0);
    }
    if (0..p).all(|i| factor[(i, i)] != 0.0) {
        let resid = x - mean;
        match factor.solve_lower_triangular(&resid) {
            Some(alpha) => {
                let quad = alpha.norm_squared();
                let logdet: f64 = 2.0 * (0..p).map(|i| factor[(i, i)].abs().ln()).sum::<f64>();
                return Ok(-0.5 * (p as f64 * linalg::LN_2PI + logdet + quad));
            }
            None => {}
        }
    }
    super::mvn_logpdf(x, mean, &(factor * factor.transpose()))
}
