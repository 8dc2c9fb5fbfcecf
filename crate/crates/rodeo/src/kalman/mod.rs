//! Gaussian state-space primitives in standard and square-root form, with
//! blockwise wrappers that apply each primitive independently per system
//! variable.
//!
//! The square-root variants propagate lower-triangular Cholesky-style
//! factors through QR re-triangularizations instead of full covariances,
//! which is markedly more stable on stiff problems.

mod standard;
mod sqrt;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::rng::RngKey;

/// Which Kalman implementation covariances flow through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KalmanType {
    Standard,
    SquareRoot,
}

/// A covariance matrix, stored dense or as a lower-triangular factor L with
/// cov = L·Lᵀ.
#[derive(Debug, Clone, PartialEq)]
pub enum Cov {
    Full(DMatrix<f64>),
    Factor(DMatrix<f64>),
}

impl Cov {
    pub fn zeros(kind: KalmanType, p: usize) -> Self {
        match kind {
            KalmanType::Standard => Cov::Full(DMatrix::zeros(p, p)),
            KalmanType::SquareRoot => Cov::Factor(DMatrix::zeros(p, p)),
        }
    }

    /// Build from a dense PSD matrix, factoring it for the square-root kind.
    pub fn from_dense(kind: KalmanType, m: &DMatrix<f64>) -> Result<Self> {
        match kind {
            KalmanType::Standard => Ok(Cov::Full(linalg::symmetrize(m))),
            KalmanType::SquareRoot => Ok(Cov::Factor(linalg::psd_factor(m, "covariance")?)),
        }
    }

    pub fn kind(&self) -> KalmanType {
        match self {
            Cov::Full(_) => KalmanType::Standard,
            Cov::Factor(_) => KalmanType::SquareRoot,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Cov::Full(m) | Cov::Factor(m) => m.nrows(),
        }
    }

    /// Dense covariance regardless of representation.
    pub fn dense(&self) -> DMatrix<f64> {
        match self {
            Cov::Full(m) => m.clone(),
            Cov::Factor(l) => l * l.transpose(),
        }
    }

    /// A factor L with L·Lᵀ equal to this covariance.
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        match self {
            Cov::Full(m) => linalg::psd_factor(m, "covariance"),
            Cov::Factor(l) => Ok(l.clone()),
        }
    }
}

/// A Gaussian over a state vector: the unit of Kalman recursion state.
#[derive(Debug, Clone)]
pub struct GaussState {
    pub mean: DVector<f64>,
    pub cov: Cov,
}

impl GaussState {
    pub fn new(mean: DVector<f64>, cov: Cov) -> Result<Self> {
        if cov.dim() != mean.len() {
            return invalid(format!(
                "state mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            ));
        }
        Ok(GaussState { mean, cov })
    }

    /// A point mass: zero covariance in the requested representation.
    pub fn deterministic(kind: KalmanType, mean: DVector<f64>) -> Self {
        let p = mean.len();
        GaussState { mean, cov: Cov::zeros(kind, p) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn kind(&self) -> KalmanType {
        self.cov.kind()
    }

    pub fn cov_dense(&self) -> DMatrix<f64> {
        self.cov.dense()
    }

    /// Log-density of this Gaussian at `x`.
    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        match &self.cov {
            Cov::Full(m) => mvn_logpdf(x, &self.mean, m),
            Cov::Factor(l) => sqrt::logpdf_factor(x, &self.mean, l),
        }
    }

    /// Deterministic draw from this Gaussian using `key`.
    pub fn sample(&self, key: RngKey) -> Result<DVector<f64>> {
        let l = self.cov.factor()?;
        Ok(&self.mean + &l * key.normal_vector(self.dim()))
    }
}

/// Backward affine conditional X_n | X_{n+1} = N(gain·X_{n+1} + offset, cond_cov).
#[derive(Debug, Clone)]
pub struct AffineCond {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub cond_cov: Cov,
}

/// Per-variable states of a blocked Gaussian Markov chain.
#[derive(Debug, Clone)]
pub struct BlockState {
    pub blocks: Vec<GaussState>,
}

impl BlockState {
    pub fn new(blocks: Vec<GaussState>) -> Result<Self> {
        if blocks.is_empty() {
            return invalid("a block state needs at least one block");
        }
        let kind = blocks[0].kind();
        if blocks.iter().any(|b| b.kind() != kind) {
            return invalid("all blocks must share the same covariance representation");
        }
        Ok(BlockState { blocks })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn kind(&self) -> KalmanType {
        self.blocks[0].kind()
    }

    /// Block means as a d×q matrix (row k = block k), assuming uniform block size.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let d = self.blocks.len();
        let q = self.blocks[0].dim();
        DMatrix::from_fn(d, q, |k, j| self.blocks[k].mean[j])
    }
}

/// log N(x; mean, cov) for a dense PSD covariance.
///
/// Dimensions whose variance row is exactly zero contribute 0 when the
/// residual there is zero (the log-density of N(0; 0, 0) in masked
/// observation models) and −∞ otherwise. The degenerate 0-dimensional
/// case returns 0.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let p = x.len();
    if mean.len() != p || cov.nrows() != p || cov.ncols() != p {
        return invalid(format!(
            "mvn_logpdf dimension mismatch: x {}, mean {}, cov {}x{}",
            p,
            mean.len(),
            cov.nrows(),
            cov.ncols()
        ));
    }
    let resid = x - mean;
    let act = linalg::active_rows(cov);
    for i in 0..p {
        if cov[(i, i)] == 0.0 && resid[i] != 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
    }
    if act.is_empty() {
        return Ok(0.0);
    }
    let (r, s) = if act.len() == p {
        (resid, cov.clone())
    } else {
        (linalg::gather_vec(&resid, &act), linalg::gather_mat(cov, &act, &act))
    };
    let chol = linalg::chol_psd(&s, "mvn_logpdf covariance")?;
    let alpha = chol.solve(&r);
    // the quadratic form is nonnegative by construction; ill-conditioned
    // solves must not be allowed to push the density above its maximum
    let quad = r.dot(&alpha).max(0.0);
    Ok(-0.5 * (act.len() as f64 * linalg::LN_2PI + linalg::logdet(&chol) + quad))
}

/// Deterministic draw mean + L·ε with ε standard normal from `key`.
pub fn mvn_sample(key: RngKey, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return invalid("mvn_sample dimension mismatch");
    }
    let l = linalg::psd_factor(cov, "mvn_sample covariance")?;
    Ok(mean + &l * key.normal_vector(mean.len()))
}

/// One-step prediction: mean' = trans·mean + drift, cov' = trans·cov·transᵀ + noise.
pub fn predict(
    state: &GaussState,
    drift: &DVector<f64>,
    trans: &DMatrix<f64>,
    noise: &Cov,
) -> Result<GaussState> {
    let p = state.dim();
    if trans.ncols() != p || trans.nrows() != drift.len() || noise.dim() != trans.nrows() {
        return invalid("predict dimension mismatch");
    }
    match (&state.cov, noise) {
        (Cov::Full(sig), Cov::Full(r)) => {
            let (m, c) = standard::predict(&state.mean, sig, drift, trans, r);
            GaussState::new(m, Cov::Full(c))
        }
        (Cov::Factor(l), Cov::Factor(lr)) => {
            let (m, lf) = sqrt::predict(&state.mean, l, drift, trans, lr);
            GaussState::new(m, Cov::Factor(lf))
        }
        _ => invalid("predict: state and noise use different covariance representations"),
    }
}

/// Measurement update for observation z = W·x + a + noise with variance V.
pub fn update(
    state: &GaussState,
    z: &DVector<f64>,
    a: &DVector<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<GaussState> {
    let p = state.dim();
    let r = z.len();
    if a.len() != r || w.nrows() != r || w.ncols() != p || v.nrows() != r || v.ncols() != r {
        return invalid("update dimension mismatch");
    }
    match &state.cov {
        Cov::Full(sig) => {
            let (m, c) = standard::update(&state.mean, sig, z, a, w, v)?;
            GaussState::new(m, Cov::Full(c))
        }
        Cov::Factor(l) => {
            let (m, lf) = sqrt::update(&state.mean, l, z, a, w, v)?;
            GaussState::new(m, Cov::Factor(lf))
        }
    }
}

/// One Rauch–Tung–Striebel smoothing step.
///
/// `noise` is the process noise that produced `predicted` from `filtered`;
/// the square-root variant needs it to rebuild factors without downdating.
pub fn smooth(
    next_smoothed: &GaussState,
    filtered: &GaussState,
    predicted: &GaussState,
    trans: &DMatrix<f64>,
    noise: &Cov,
) -> Result<GaussState> {
    match (&next_smoothed.cov, &filtered.cov, &predicted.cov, noise) {
        (Cov::Full(ns), Cov::Full(f), Cov::Full(pr), Cov::Full(_)) => {
            let (m, c) = standard::smooth(
                (&next_smoothed.mean, ns),
                (&filtered.mean, f),
                (&predicted.mean, pr),
                trans,
            )?;
            GaussState::new(m, Cov::Full(c))
        }
        (Cov::Factor(ns), Cov::Factor(f), Cov::Factor(_), Cov::Factor(lr)) => {
            let (m, l) = sqrt::smooth(
                (&next_smoothed.mean, ns),
                (&filtered.mean, f),
                &predicted.mean,
                trans,
                lr,
            )?;
            GaussState::new(m, Cov::Factor(l))
        }
        _ => invalid("smooth: mixed covariance representations"),
    }
}

/// Parameters (μ̃, Σ̃) of X_n | X_{n+1} = x_next, Z_{1:n}: the backward
/// conditional used by backward sampling and by the smoother-mean density
/// evaluations.
pub fn backward_params(
    x_next: &DVector<f64>,
    filtered: &GaussState,
    predicted: &GaussState,
    trans: &DMatrix<f64>,
    noise: &Cov,
) -> Result<GaussState> {
    match (&filtered.cov, &predicted.cov, noise) {
        (Cov::Full(f), Cov::Full(pr), Cov::Full(_)) => {
            let (m, c) =
                standard::backward_params(x_next, (&filtered.mean, f), (&predicted.mean, pr), trans)?;
            GaussState::new(m, Cov::Full(c))
        }
        (Cov::Factor(f), Cov::Factor(_), Cov::Factor(lr)) => {
            let (m, l) =
                sqrt::backward_params(x_next, (&filtered.mean, f), &predicted.mean, trans, lr)?;
            GaussState::new(m, Cov::Factor(l))
        }
        _ => invalid("backward_params: mixed covariance representations"),
    }
}

/// Draw X_n given X_{n+1} = x_next along the backward pass; deterministic in `key`.
pub fn sample_back(
    key: RngKey,
    x_next: &DVector<f64>,
    filtered: &GaussState,
    predicted: &GaussState,
    trans: &DMatrix<f64>,
    noise: &Cov,
) -> Result<DVector<f64>> {
    backward_params(x_next, filtered, predicted, trans, noise)?.sample(key)
}

/// Forecast the observation distribution: mean = W·μ + a, cov = W·Σ·Wᵀ + V.
pub fn forecast(
    predicted: &GaussState,
    a: &DVector<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<GaussState> {
    let p = predicted.dim();
    let r = a.len();
    if w.nrows() != r || w.ncols() != p || v.nrows() != r || v.ncols() != r {
        return invalid("forecast dimension mismatch");
    }
    match &predicted.cov {
        Cov::Full(sig) => {
            let (m, c) = standard::forecast(&predicted.mean, sig, a, w, v);
            GaussState::new(m, Cov::Full(c))
        }
        Cov::Factor(l) => {
            let (m, lf) = sqrt::forecast(&predicted.mean, l, a, w, v)?;
            GaussState::new(m, Cov::Factor(lf))
        }
    }
}

/// Backward conditional X_n | X_{n+1} as an affine-Gaussian map.
pub fn condition(
    filtered: &GaussState,
    predicted: &GaussState,
    trans: &DMatrix<f64>,
    noise: &Cov,
) -> Result<AffineCond> {
    match (&filtered.cov, &predicted.cov, noise) {
        (Cov::Full(f), Cov::Full(pr), Cov::Full(_)) => {
            let (gain, offset, c) =
                standard::condition((&filtered.mean, f), (&predicted.mean, pr), trans)?;
            Ok(AffineCond { gain, offset, cond_cov: Cov::Full(c) })
        }
        (Cov::Factor(f), Cov::Factor(_), Cov::Factor(lr)) => {
            let (gain, offset, l) =
                sqrt::condition((&filtered.mean, f), &predicted.mean, trans, lr)?;
            Ok(AffineCond { gain, offset, cond_cov: Cov::Factor(l) })
        }
        _ => invalid("condition: mixed covariance representations"),
    }
}

fn check_block_len<T>(what: &str, items: &[T], d: usize) -> Result<()> {
    if items.len() != d {
        return Err(Error::Invalid(format!(
            "{what}: expected {d} blocks, got {}",
            items.len()
        )));
    }
    Ok(())
}

/// Blockwise prediction; all inputs are per-variable lists of equal length.
pub fn block_predict(
    state: &BlockState,
    trans: &[DMatrix<f64>],
    noise: &[Cov],
) -> Result<BlockState> {
    let d = state.n_blocks();
    check_block_len("block_predict trans", trans, d)?;
    check_block_len("block_predict noise", noise, d)?;
    let blocks = state
        .blocks
        .iter()
        .zip(trans.iter().zip(noise.iter()))
        .map(|(b, (q, r))| predict(b, &DVector::zeros(q.nrows()), q, r))
        .collect::<Result<Vec<_>>>()?;
    BlockState::new(blocks)
}

/// Blockwise measurement update.
pub fn block_update(
    state: &BlockState,
    z: &[DVector<f64>],
    a: &[DVector<f64>],
    w: &[DMatrix<f64>],
    v: &[DMatrix<f64>],
) -> Result<BlockState> {
    let d = state.n_blocks();
    check_block_len("block_update z", z, d)?;
    check_block_len("block_update a", a, d)?;
    check_block_len("block_update w", w, d)?;
    check_block_len("block_update v", v, d)?;
    let blocks = (0..d)
        .map(|k| update(&state.blocks[k], &z[k], &a[k], &w[k], &v[k]))
        .collect::<Result<Vec<_>>>()?;
    BlockState::new(blocks)
}

/// Blockwise RTS smoothing step.
pub fn block_smooth(
    next_smoothed: &BlockState,
    filtered: &BlockState,
    predicted: &BlockState,
    trans: &[DMatrix<f64>],
    noise: &[Cov],
) -> Result<BlockState> {
    let d = filtered.n_blocks();
    check_block_len("block_smooth next", &next_smoothed.blocks, d)?;
    check_block_len("block_smooth predicted", &predicted.blocks, d)?;
    check_block_len("block_smooth trans", trans, d)?;
    check_block_len("block_smooth noise", noise, d)?;
    let blocks = (0..d)
        .map(|k| {
            smooth(
                &next_smoothed.blocks[k],
                &filtered.blocks[k],
                &predicted.blocks[k],
                &trans[k],
                &noise[k],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    BlockState::new(blocks)
}

/// Blockwise backward sampling; block k uses the child key `key.split(k)`.
pub fn block_sample_back(
    key: RngKey,
    x_next: &[DVector<f64>],
    filtered: &BlockState,
    predicted: &BlockState,
    trans: &[DMatrix<f64>],
    noise: &[Cov],
) -> Result<Vec<DVector<f64>>> {
    let d = filtered.n_blocks();
    check_block_len("block_sample_back x_next", x_next, d)?;
    check_block_len("block_sample_back predicted", &predicted.blocks, d)?;
    check_block_len("block_sample_back trans", trans, d)?;
    check_block_len("block_sample_back noise", noise, d)?;
    (0..d)
        .map(|k| {
            sample_back(
                key.split(k as u64),
                &x_next[k],
                &filtered.blocks[k],
                &predicted.blocks[k],
                &trans[k],
                &noise[k],
            )
        })
        .collect()
}

/// Blockwise observation forecast.
pub fn block_forecast(
    predicted: &BlockState,
    a: &[DVector<f64>],
    w: &[DMatrix<f64>],
    v: &[DMatrix<f64>],
) -> Result<BlockState> {
    let d = predicted.n_blocks();
    check_block_len("block_forecast a", a, d)?;
    check_block_len("block_forecast w", w, d)?;
    check_block_len("block_forecast v", v, d)?;
    let blocks = (0..d)
        .map(|k| forecast(&predicted.blocks[k], &a[k], &w[k], &v[k]))
        .collect::<Result<Vec<_>>>()?;
    BlockState::new(blocks)
}

/// Blockwise backward conditionals.
pub fn block_condition(
    filtered: &BlockState,
    predicted: &BlockState,
    trans: &[DMatrix<f64>],
    noise: &[Cov],
) -> Result<Vec<AffineCond>> {
    let d = filtered.n_blocks();
    check_block_len("block_condition predicted", &predicted.blocks, d)?;
    check_block_len("block_condition trans", trans, d)?;
    check_block_len("block_condition noise", noise, d)?;
    (0..d)
        .map(|k| condition(&filtered.blocks[k], &predicted.blocks[k], &trans[k], &noise[k]))
        .collect()
}
