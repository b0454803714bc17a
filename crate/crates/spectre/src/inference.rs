//! Data-driven estimators built on the sample Gram eigendecomposition:
//! source counting, power estimation, subspace bilinear forms, the
//! correlated-noise MUSIC scan and the classical MDL/AIC baselines.
//!
//! Everything operates on the eigenvalues and eigenvectors of `Y Y^H` alone;
//! the noise covariance never enters. The key objects are the empirical
//! transforms
//!
//! ```text
//! m̂(x) = 1/(N-k̂) Σ_{n>k̂} 1/(λ̂_n - x)
//! ĝ(x) = m̂(x) (x c m̂(x) + c - 1)
//! ```
//!
//! built from the noise part of the spectrum. Spike positions map to source
//! powers through `p̂ = 1/ĝ(λ̂)`, and the ratio `ĝ'/(m̂ ĝ)` at a spike is the
//! weight that turns naive projector estimates into consistent ones.

use crate::spectral_model::ToeplitzCovariance;
use faer::{Mat, MatRef, Side};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum InferenceError {
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("eigendecomposition failed")]
    EigFailed,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("evaluation point {x} coincides with a retained eigenvalue")]
    Pole { x: f64 },
    #[error("operation requires at least one detected source")]
    NoSpikes,
    #[error("localization grid is empty or not strictly increasing within [-pi/2, pi/2]")]
    BadGrid,
    #[error("whitening failed: {0}")]
    Whitening(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Eigenvalues (descending) and matching orthonormal eigenvectors of a
/// sample Gram matrix `Y Y^H`.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    values: Vec<f64>,
    vectors: Mat<Complex64>,
}

impl EigenDecomp {
    /// Dimension `N` of the Gram matrix.
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Eigenvector columns, aligned with [`values`](Self::values).
    pub fn vectors(&self) -> MatRef<'_, Complex64> {
        self.vectors.as_ref()
    }

    /// Assembles an `EigenDecomp` from precomputed parts (descending order
    /// enforced). Mainly useful for synthetic spectra in tests.
    pub fn from_parts(values: Vec<f64>, vectors: Mat<Complex64>) -> Result<Self, InferenceError> {
        if values.len() != vectors.ncols() || vectors.nrows() != vectors.ncols() {
            return Err(InferenceError::Dimension(
                "eigenvector matrix must be square and aligned with the values".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(InferenceError::InvalidConfig(
                "eigenvalues must be in descending order".into(),
            ));
        }
        Ok(EigenDecomp { values, vectors })
    }
}

/// Hermitian eigendecomposition of `Y Y^H`, eigenvalues sorted descending.
pub fn sample_gram_eigs(y: MatRef<'_, Complex64>) -> Result<EigenDecomp, InferenceError> {
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            if !y[(i, j)].re.is_finite() || !y[(i, j)].im.is_finite() {
                return Err(InferenceError::NonFinite { row: i, col: j });
            }
        }
    }
    let gram = y * y.adjoint();
    let evd = gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| InferenceError::EigFailed)?;
    let n = y.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let raw: Vec<f64> = (0..n).map(|i| evd.S()[i].re).collect();
    order.sort_by(|&a, &b| raw[b].partial_cmp(&raw[a]).expect("finite eigenvalues"));
    let values: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
    let u = evd.U();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, order[j])]);
    Ok(EigenDecomp { values, vectors })
}

/// Detector configuration: an upper bound `L >= K` on the source count and
/// the relative eigenvalue-gap threshold `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    pub max_sources: usize,
    pub epsilon: f64,
}

impl DetectionConfig {
    pub fn new(max_sources: usize, epsilon: f64) -> Result<Self, InferenceError> {
        if max_sources == 0 {
            return Err(InferenceError::InvalidConfig(
                "max_sources must be >= 1".into(),
            ));
        }
        let positive = epsilon.is_finite() && epsilon > 0.0;
        if !positive {
            return Err(InferenceError::InvalidConfig(
                "epsilon must be positive".into(),
            ));
        }
        Ok(DetectionConfig {
            max_sources,
            epsilon,
        })
    }
}

/// Output of the gap detector: the estimated source count and the raw
/// consecutive-eigenvalue ratios, so alternative threshold rules can be
/// applied after the fact.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub k_hat: usize,
    /// `ratios[k-1] = λ̂_k / λ̂_{k+1}` for `k = 1..=L`.
    pub ratios: Vec<f64>,
    /// True when tiny eigenvalues had to be clamped (e.g. `N > T` zero
    /// modes) or a ratio was taken as infinite.
    pub clamped: bool,
}

/// Picks the source count from the eigenvalue gaps: the largest
/// `k` in `{0, ..., L}` whose ratio `λ̂_k/λ̂_{k+1}` exceeds `1 + epsilon`
/// (`k = 0`, with an infinite formal ratio, is always admissible).
pub fn detect_sources(
    eigs: &EigenDecomp,
    cfg: &DetectionConfig,
) -> Result<DetectionResult, InferenceError> {
    let l = cfg.max_sources;
    if eigs.n() < l + 1 {
        return Err(InferenceError::InvalidConfig(format!(
            "need at least L+1 = {} eigenvalues, got {}",
            l + 1,
            eigs.n()
        )));
    }
    let floor = 1e-14 * eigs.value(0).max(f64::MIN_POSITIVE);
    let mut clamped = false;
    let mut ratios = Vec::with_capacity(l);
    for k in 1..=l {
        let num = eigs.value(k - 1);
        let den = eigs.value(k);
        let r = if den <= 0.0 {
            clamped = true;
            f64::INFINITY
        } else if den < floor || num < floor {
            clamped = true;
            num.max(floor) / den.max(floor)
        } else {
            num / den
        };
        ratios.push(r);
    }
    let mut k_hat = 0;
    for (k, &r) in ratios.iter().enumerate() {
        if r > 1.0 + cfg.epsilon {
            k_hat = k + 1;
        }
    }
    Ok(DetectionResult {
        k_hat,
        ratios,
        clamped,
    })
}

/// Alternative count used for definitional comparisons: with the same rule
/// as [`detect_sources`] but a caller-supplied threshold.
pub fn k_hat_from_ratios(ratios: &[f64], epsilon: f64) -> usize {
    let mut k_hat = 0;
    for (k, &r) in ratios.iter().enumerate() {
        if r > 1.0 + epsilon {
            k_hat = k + 1;
        }
    }
    k_hat
}

fn check_not_pole(eigs: &EigenDecomp, k_hat: usize, x: f64) -> Result<(), InferenceError> {
    if eigs.values[k_hat..].contains(&x) {
        return Err(InferenceError::Pole { x });
    }
    Ok(())
}

/// `m̂(x)`: Stieltjes transform of the retained (noise) eigenvalues.
pub fn m_hat(eigs: &EigenDecomp, k_hat: usize, x: f64) -> Result<f64, InferenceError> {
    check_not_pole(eigs, k_hat, x)?;
    let tail = &eigs.values[k_hat..];
    Ok(tail.iter().map(|&l| 1.0 / (l - x)).sum::<f64>() / tail.len() as f64)
}

/// `m̂'(x)`, exact derivative of the finite sum.
pub fn m_hat_prime(eigs: &EigenDecomp, k_hat: usize, x: f64) -> Result<f64, InferenceError> {
    check_not_pole(eigs, k_hat, x)?;
    let tail = &eigs.values[k_hat..];
    Ok(tail.iter().map(|&l| (l - x).powi(-2)).sum::<f64>() / tail.len() as f64)
}

/// `ĝ(x) = m̂(x)(x c m̂(x) + c - 1)`, the empirical version of `g`.
pub fn g_hat(eigs: &EigenDecomp, k_hat: usize, c_t: f64, x: f64) -> Result<f64, InferenceError> {
    let m = m_hat(eigs, k_hat, x)?;
    Ok(m * (x * c_t * m + c_t - 1.0))
}

/// Analytic `ĝ'(x)`; finite differences are useless this close to the poles.
pub fn g_hat_prime(
    eigs: &EigenDecomp,
    k_hat: usize,
    c_t: f64,
    x: f64,
) -> Result<f64, InferenceError> {
    let m = m_hat(eigs, k_hat, x)?;
    let mp = m_hat_prime(eigs, k_hat, x)?;
    Ok(mp * (x * c_t * m + c_t - 1.0) + m * (c_t * m + x * c_t * mp))
}

/// A power estimate together with a reliability flag; the estimate is kept
/// even when flagged (an eigenvalue sitting too close to the bulk makes
/// `ĝ` non-positive and the inversion meaningless).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    pub value: f64,
    pub reliable: bool,
}

/// `p̂_i = 1/ĝ(λ̂_i)` for the `k̂` isolated eigenvalues, in eigenvalue order.
pub fn estimate_powers(
    eigs: &EigenDecomp,
    k_hat: usize,
    c_t: f64,
) -> Result<Vec<PowerEstimate>, InferenceError> {
    if k_hat == 0 {
        return Err(InferenceError::NoSpikes);
    }
    (0..k_hat)
        .map(|i| {
            let g = g_hat(eigs, k_hat, c_t, eigs.value(i))?;
            Ok(PowerEstimate {
                value: 1.0 / g,
                reliable: g > 0.0,
            })
        })
        .collect()
}

/// The consistency weight `ĝ'(λ̂_i) / (m̂(λ̂_i) ĝ(λ̂_i))` attached to spike `i`.
pub fn spike_weight(
    eigs: &EigenDecomp,
    k_hat: usize,
    c_t: f64,
    i: usize,
) -> Result<f64, InferenceError> {
    let x = eigs.value(i);
    Ok(g_hat_prime(eigs, k_hat, c_t, x)? / (m_hat(eigs, k_hat, x)? * g_hat(eigs, k_hat, c_t, x)?))
}

/// Consistent estimate of the bilinear form `a^H Π b` of the true signal
/// subspace projector for the equal-power group containing spike `i`: the
/// weighted sample projector `w_i · a^H Π̂ b` with `Π̂` spanning the group's
/// eigenvectors.
pub fn bilinear_form_estimate(
    eigs: &EigenDecomp,
    k_hat: usize,
    spike_index: usize,
    group: &[usize],
    a_vec: &[Complex64],
    b_vec: &[Complex64],
    c_t: f64,
) -> Result<Complex64, InferenceError> {
    if spike_index >= k_hat || group.iter().any(|&j| j >= k_hat) {
        return Err(InferenceError::InvalidConfig(
            "spike and group indices must lie below k_hat".into(),
        ));
    }
    let n = eigs.n();
    if a_vec.len() != n || b_vec.len() != n {
        return Err(InferenceError::Dimension(format!(
            "vectors must have length {n}"
        )));
    }
    let w = spike_weight(eigs, k_hat, c_t, spike_index)?;
    let u = eigs.vectors();
    let mut acc = Complex64::new(0.0, 0.0);
    for &j in group {
        let mut ua = Complex64::new(0.0, 0.0);
        let mut ub = Complex64::new(0.0, 0.0);
        for r in 0..n {
            ua += a_vec[r].conj() * u[(r, j)];
            ub += u[(r, j)].conj() * b_vec[r];
        }
        acc += ua * ub;
    }
    Ok(w * acc)
}

/// Unit-norm steering vector of an `n`-element half-wavelength uniform
/// linear array: entries `exp(-iπ k sin θ)/sqrt(n)`. The λ/2 spacing keeps
/// the response unambiguous over `[-π/2, π/2]` and puts the first sidelobes
/// of nearby sources outside the resolution windows used in practice.
pub fn steering_vector(theta: f64, n: usize) -> Vec<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    let base = -std::f64::consts::PI * theta.sin();
    (0..n)
        .map(|k| Complex64::from_polar(scale, base * k as f64))
        .collect()
}

/// A localization spectrum over an angle grid with its detected peaks.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationScan {
    /// Angles in radians, strictly increasing.
    pub theta_grid: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Local maxima (3-point test, parabolic refinement), highest first.
    pub peaks: Vec<Peak>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub angle: f64,
    pub height: f64,
}

impl LocalizationScan {
    /// Angles of the `k` highest peaks, best first.
    pub fn angle_estimates(&self, k: usize) -> Vec<f64> {
        self.peaks.iter().take(k).map(|p| p.angle).collect()
    }
}

/// Evenly spaced grid in degrees, returned in radians.
pub fn angle_grid_deg(lo_deg: f64, hi_deg: f64, step_deg: f64) -> Vec<f64> {
    let n = ((hi_deg - lo_deg) / step_deg).round() as usize;
    (0..=n)
        .map(|i| (lo_deg + i as f64 * step_deg).to_radians())
        .collect()
}

fn scan_with_weights(
    eigs: &EigenDecomp,
    k_hat: usize,
    weights: &[f64],
    grid: &[f64],
) -> Result<LocalizationScan, InferenceError> {
    const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;
    if grid.is_empty()
        || grid.windows(2).any(|w| w[0] >= w[1])
        || grid.iter().any(|t| !(*t >= -HALF_PI - 1e-12 && *t <= HALF_PI + 1e-12))
    {
        return Err(InferenceError::BadGrid);
    }
    if k_hat == 0 {
        return Err(InferenceError::NoSpikes);
    }
    let n = eigs.n();
    let u = eigs.vectors();
    let gamma: Vec<f64> = grid
        .iter()
        .map(|&theta| {
            let h = steering_vector(theta, n);
            (0..k_hat)
                .map(|j| {
                    let mut inner = Complex64::new(0.0, 0.0);
                    for r in 0..n {
                        inner += h[r].conj() * u[(r, j)];
                    }
                    weights[j] * inner.norm_sqr()
                })
                .sum()
        })
        .collect();
    let mut peaks = Vec::new();
    for i in 1..grid.len().saturating_sub(1) {
        if gamma[i] > gamma[i - 1] && gamma[i] > gamma[i + 1] {
            let denom = gamma[i - 1] - 2.0 * gamma[i] + gamma[i + 1];
            let (angle, height) = if denom < 0.0 {
                let h = 0.5 * (grid[i + 1] - grid[i - 1]);
                let delta = 0.5 * (gamma[i - 1] - gamma[i + 1]) / denom;
                (
                    grid[i] + delta * h,
                    gamma[i] - 0.25 * (gamma[i - 1] - gamma[i + 1]) * delta,
                )
            } else {
                (grid[i], gamma[i])
            };
            peaks.push(Peak { angle, height });
        }
    }
    peaks.sort_by(|a, b| b.height.partial_cmp(&a.height).expect("finite heights"));
    Ok(LocalizationScan {
        theta_grid: grid.to_vec(),
        gamma,
        peaks,
    })
}

/// The weighted localization function `γ̂(θ) = Σ_j w_j |h(θ)^H û_j|²` over
/// the `k̂` spike eigenvectors, with the consistency weights of
/// [`spike_weight`]. Its peaks are the angle estimates.
pub fn music_scan(
    eigs: &EigenDecomp,
    k_hat: usize,
    c_t: f64,
    grid: &[f64],
) -> Result<LocalizationScan, InferenceError> {
    let weights: Vec<f64> = (0..k_hat)
        .map(|j| spike_weight(eigs, k_hat, c_t, j))
        .collect::<Result<_, _>>()?;
    scan_with_weights(eigs, k_hat, &weights, grid)
}

/// Classical MUSIC localization function (unit weights).
pub fn traditional_music_scan(
    eigs: &EigenDecomp,
    k_hat: usize,
    grid: &[f64],
) -> Result<LocalizationScan, InferenceError> {
    scan_with_weights(eigs, k_hat, &vec![1.0; k_hat], grid)
}

/// Cached inverse square root of a noise covariance, for oracle whitening.
#[derive(Debug, Clone)]
pub struct Whitener {
    inv_sqrt: Mat<Complex64>,
    trace_inv_mean: f64,
}

impl Whitener {
    pub fn new(r: &ToeplitzCovariance) -> Result<Self, InferenceError> {
        let t = r.dimension();
        let evd = r
            .to_dense()
            .self_adjoint_eigen(Side::Lower)
            .map_err(|_| InferenceError::EigFailed)?;
        let max = (0..t).map(|i| evd.S()[i]).fold(0.0f64, f64::max);
        let mut inv_sqrt_diag = Vec::with_capacity(t);
        let mut trace_inv = 0.0;
        for i in 0..t {
            let l = evd.S()[i];
            if l <= 1e-12 * max {
                return Err(InferenceError::Whitening(format!(
                    "covariance is singular (eigenvalue {l:.3e})"
                )));
            }
            inv_sqrt_diag.push(1.0 / l.sqrt());
            trace_inv += 1.0 / l;
        }
        let u = evd.U();
        let mut inv_sqrt = Mat::<Complex64>::zeros(t, t);
        for i in 0..t {
            for j in 0..=i {
                let mut v = 0.0;
                for (k, d) in inv_sqrt_diag.iter().enumerate() {
                    v += u[(i, k)] * d * u[(j, k)];
                }
                inv_sqrt[(i, j)] = Complex64::new(v, 0.0);
                inv_sqrt[(j, i)] = Complex64::new(v, 0.0);
            }
        }
        Ok(Whitener {
            inv_sqrt,
            trace_inv_mean: trace_inv / t as f64,
        })
    }

    /// `Y R^{-1/2}`.
    pub fn apply(&self, y: MatRef<'_, Complex64>) -> Result<Mat<Complex64>, InferenceError> {
        if y.ncols() != self.inv_sqrt.nrows() {
            return Err(InferenceError::Dimension(format!(
                "matrix has {} columns, whitener expects {}",
                y.ncols(),
                self.inv_sqrt.nrows()
            )));
        }
        Ok(y * self.inv_sqrt.as_ref())
    }

    /// `tr(R^{-1})/T`: the effective power gain of whitening, used to map
    /// whitened-domain power estimates back to the original scale.
    pub fn power_gain(&self) -> f64 {
        self.trace_inv_mean
    }
}

/// One-shot oracle whitening `Y R^{-1/2}`.
pub fn whiten(
    y: MatRef<'_, Complex64>,
    r: &ToeplitzCovariance,
) -> Result<Mat<Complex64>, InferenceError> {
    Whitener::new(r)?.apply(y)
}

fn wax_kailath(eigs: &EigenDecomp, t_samples: usize, l: usize, mdl: bool) -> usize {
    let n = eigs.n();
    let l = l.min(n - 1);
    let t = t_samples as f64;
    let floor = 1e-30 * eigs.value(0).max(f64::MIN_POSITIVE);
    let mut best = (f64::INFINITY, 0usize);
    for k in 0..=l {
        let tail = &eigs.values[k..];
        let len = tail.len() as f64;
        let mean_log: f64 = tail.iter().map(|&x| x.max(floor).ln()).sum::<f64>() / len;
        let mean: f64 = tail.iter().sum::<f64>() / len;
        // log of geometric over arithmetic mean of the noise eigenvalues
        let log_ratio = mean_log - mean.max(floor).ln();
        let dof = (k * (2 * n - k)) as f64;
        let penalty = if mdl { 0.5 * dof * t.ln() } else { dof };
        let crit = -t * len * log_ratio + penalty;
        if crit < best.0 {
            best = (crit, k);
        }
    }
    best.1
}

/// Minimum-description-length source count (white-noise likelihood).
pub fn mdl_estimate(eigs: &EigenDecomp, t_samples: usize, l: usize) -> usize {
    wax_kailath(eigs, t_samples, l, true)
}

/// Akaike information criterion source count (white-noise likelihood).
pub fn aic_estimate(eigs: &EigenDecomp, t_samples: usize, l: usize) -> usize {
    wax_kailath(eigs, t_samples, l, false)
}
