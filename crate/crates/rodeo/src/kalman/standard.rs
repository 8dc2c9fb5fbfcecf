//! Standard (full-covariance) Kalman recursions.

use nalgebra::{DMatrix, DVector};

use crate::error::{numerical, Result};
use crate::linalg::{self, symmetrize};

pub fn predict(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    drift: &DVector<f64>,
    trans: &DMatrix<f64>,
    noise: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let m = trans * mean + drift;
    let c = symmetrize(&(trans * cov * trans.transpose() + noise));
    (m, c)
}

/// Rows of the observation model that carry any information: nonzero W row
/// or nonzero noise variance. A masked observation (all-zero row in both)
/// must leave the state untouched rather than produce a singular innovation.
fn informative_rows(w: &DMatrix<f64>, v: &DMatrix<f64>) -> Vec<usize> {
    (0..w.nrows())
        .filter(|&i| w.row(i).iter().any(|x| *x != 0.0) || v[(i, i)] != 0.0)
        .collect()
}

pub fn update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    z: &DVector<f64>,
    a: &DVector<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let rows = informative_rows(w, v);
    if rows.is_empty() {
        return Ok((mean.clone(), cov.clone()));
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
    let s = symmetrize(&(&w * cov * w.transpose() + &v));
    let chol = linalg::chol_psd(&s, "update innovation covariance")?;
    let cwt = cov * w.transpose();
    let gain = linalg::solve_right(&chol, &cwt);
    let resid = z - &w * mean - a;
    let m = mean + &gain * resid;
    let c = symmetrize(&(cov - &gain * &w * cov));
    Ok((m, c))
}

/// Smoother gain A = Σ_f·Qᵀ·Σ_pred⁻¹.
fn smoother_gain(
    filt_cov: &DMatrix<f64>,
    pred_cov: &DMatrix<f64>,
    trans: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let chol = match linalg::chol_psd(pred_cov, "predicted covariance") {
        Ok(c) => c,
        Err(_) => return numerical("smoother: singular predicted covariance"),
    };
    Ok(linalg::solve_right(&chol, &(filt_cov * trans.transpose())))
}

pub fn smooth(
    next_smoothed: (&DVector<f64>, &DMatrix<f64>),
    filtered: (&DVector<f64>, &DMatrix<f64>),
    predicted: (&DVector<f64>, &DMatrix<f64>),
    trans: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let gain = smoother_gain(filtered.1, predicted.1, trans)?;
    let m = filtered.0 + &gain * (next_smoothed.0 - predicted.0);
    let c = symmetrize(&(filtered.1 + &gain * (next_smoothed.1 - predicted.1) * gain.transpose()));
    Ok((m, c))
}

pub fn backward_params(
    x_next: &DVector<f64>,
    filtered: (&DVector<f64>, &DMatrix<f64>),
    predicted: (&DVector<f64>, &DMatrix<f64>),
    trans: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let gain = smoother_gain(filtered.1, predicted.1, trans)?;
    let m = filtered.0 + &gain * (x_next - predicted.0);
    let c = symmetrize(&(filtered.1 - &gain * trans * filtered.1));
    Ok((m, c))
}

pub fn forecast(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    a: &DVector<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let m = w * mean + a;
    let c = symmetrize(&(w * cov * w.transpose() + v));
    (m, c)
}

pub fn condition(
    filtered: (&DVector<f64>, &DMatrix<f64>),
    predicted: (&DVector<f64>, &DMatrix<f64>),
    trans: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let gain = smoother_gain(filtered.1, predicted.1, trans)?;
    let offset = filtered.0 - &gain * predicted.0;
    let c = symmetrize(&(filtered.1 - &gain * trans * filtered.1));
    Ok((gain, offset, c))
}
