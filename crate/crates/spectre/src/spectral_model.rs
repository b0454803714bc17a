//! The noise process: ARMA filter, autocovariance, Toeplitz covariance and
//! the limiting spectral measure of the covariance.
//!
//! A stationary complex circular ARMA(`m`,`n`) process is the output of the
//! rational filter
//!
//! ```text
//! p(z) = (1 + a_1 z^-1 + ... + a_m z^-m) / (1 + b_1 z^-1 + ... + b_n z^-n)
//! ```
//!
//! driven by unit white noise. Its autocovariances `r_k` fill the Hermitian
//! Toeplitz matrix `R_T`, and as `T` grows the empirical eigenvalue measure
//! of `R_T` converges to the measure `nu` obtained by pushing the uniform
//! measure on `[0,1)` through the spectral density `q(u) = |p(e^{2πiu})|²`.
//! [`NuQuadrature`] represents `nu` exactly in that pushforward form, which
//! sidesteps the integrable singularity the density of `nu` develops at its
//! upper edge.

use faer::{Mat, Side};
use thiserror::Error;

/// Relative tail mass discarded when truncating the impulse response.
const IMPULSE_TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Error)]
pub enum NoiseModelError {
    /// The AR polynomial has a root on or outside the unit circle.
    #[error("AR polynomial is not stable (coefficients {0:?})")]
    UnstableAr(Vec<f64>),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// A covariance factorization pivot fell below the tolerance.
    #[error("covariance is not positive semidefinite: pivot {pivot:.3e} at index {index}")]
    NotPositiveSemidefinite { index: usize, pivot: f64 },
}

/// A causal, stationary ARMA noise specification.
///
/// `ma_coeffs` are the numerator taps `a_1..a_m`, `ar_coeffs` the denominator
/// taps `b_1..b_n`. With `unit_variance` (the default) the filter is rescaled
/// so the lag-zero autocovariance is exactly 1, which is the normalization
/// under which source powers are read as signal-to-noise ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmaSpec {
    ma_coeffs: Vec<f64>,
    ar_coeffs: Vec<f64>,
    unit_variance: bool,
    impulse_truncation: usize,
    quad_points: usize,
    /// Truncated impulse response, already rescaled if `unit_variance`.
    psi: Vec<f64>,
    /// `1 / r_0` of the raw (unscaled) filter; multiplies `q(u)`.
    density_scale: f64,
}

impl ArmaSpec {
    /// Builds a spec with the default options: unit variance on, impulse
    /// truncation cap `2^20`, 2048 quadrature nodes.
    pub fn new(ma_coeffs: Vec<f64>, ar_coeffs: Vec<f64>) -> Result<Self, NoiseModelError> {
        Self::with_options(ma_coeffs, ar_coeffs, true, 1 << 20, 2048)
    }

    pub fn with_options(
        ma_coeffs: Vec<f64>,
        ar_coeffs: Vec<f64>,
        unit_variance: bool,
        impulse_truncation: usize,
        quad_points: usize,
    ) -> Result<Self, NoiseModelError> {
        if !ma_coeffs.iter().chain(&ar_coeffs).all(|x| x.is_finite()) {
            return Err(NoiseModelError::InvalidParameter(
                "filter coefficients must be finite".into(),
            ));
        }
        if impulse_truncation == 0 {
            return Err(NoiseModelError::InvalidParameter(
                "impulse_truncation must be positive".into(),
            ));
        }
        let arma = !(ma_coeffs.is_empty() && ar_coeffs.is_empty());
        if arma && quad_points < 64 {
            return Err(NoiseModelError::InvalidParameter(format!(
                "quad_points = {quad_points} too small for a non-white spec (need >= 64)"
            )));
        }
        if !ar_stable(&ar_coeffs) {
            return Err(NoiseModelError::UnstableAr(ar_coeffs));
        }
        let mut spec = ArmaSpec {
            ma_coeffs,
            ar_coeffs,
            unit_variance,
            impulse_truncation,
            quad_points,
            psi: Vec::new(),
            density_scale: 1.0,
        };
        spec.compute_impulse()?;
        Ok(spec)
    }

    /// White noise: the trivial filter `p(z) = 1`.
    pub fn white_noise() -> Self {
        Self::new(Vec::new(), Vec::new()).expect("white noise spec is always valid")
    }

    /// AR(1) with parameter `a`, unit variance; autocovariance `r_k = a^k`.
    pub fn ar1(a: f64) -> Result<Self, NoiseModelError> {
        Self::new(Vec::new(), vec![-a])
    }

    pub fn ma_coeffs(&self) -> &[f64] {
        &self.ma_coeffs
    }

    pub fn ar_coeffs(&self) -> &[f64] {
        &self.ar_coeffs
    }

    pub fn unit_variance(&self) -> bool {
        self.unit_variance
    }

    pub fn quad_points(&self) -> usize {
        self.quad_points
    }

    pub fn is_white(&self) -> bool {
        self.ma_coeffs.is_empty() && self.ar_coeffs.is_empty()
    }

    /// Power-series coefficients of the transfer function on `|z| >= 1`,
    /// truncated so the discarded tail carries less than `1e-12` of the total
    /// absolute mass, and rescaled so `sum psi^2 = 1` when `unit_variance`.
    pub fn impulse_response(&self) -> &[f64] {
        &self.psi
    }

    fn compute_impulse(&mut self) -> Result<(), NoiseModelError> {
        let m = self.ma_coeffs.len();
        let n = self.ar_coeffs.len();
        let mut psi: Vec<f64> = Vec::with_capacity(m + 1);
        if n == 0 {
            psi.push(1.0);
            psi.extend_from_slice(&self.ma_coeffs);
        } else {
            // Long division: psi_l = a_l - sum_j b_j psi_{l-j}.
            let mut total = 0.0f64;
            let mut quiet = 0usize;
            for l in 0..self.impulse_truncation {
                let mut v = match l {
                    0 => 1.0,
                    _ if l <= m => self.ma_coeffs[l - 1],
                    _ => 0.0,
                };
                for j in 1..=n.min(l) {
                    v -= self.ar_coeffs[j - 1] * psi[l - j];
                }
                psi.push(v);
                total += v.abs();
                if l > m && v.abs() < 1e-18 * total {
                    quiet += 1;
                    if quiet >= 64 {
                        break;
                    }
                } else {
                    quiet = 0;
                }
            }
            // Trim to the shortest prefix whose discarded tail is below the
            // relative tolerance.
            let total: f64 = psi.iter().map(|x| x.abs()).sum();
            let mut tail = 0.0;
            let mut keep = psi.len();
            for (i, v) in psi.iter().enumerate().rev() {
                if tail + v.abs() > IMPULSE_TAIL_TOL * total {
                    break;
                }
                tail += v.abs();
                keep = i;
            }
            psi.truncate(keep.max(1));
        }
        let r0_raw: f64 = psi.iter().map(|x| x * x).sum();
        if !(r0_raw.is_finite() && r0_raw > 0.0) {
            return Err(NoiseModelError::InvalidParameter(
                "degenerate impulse response".into(),
            ));
        }
        self.density_scale = if self.unit_variance { 1.0 / r0_raw } else { 1.0 };
        if self.unit_variance {
            let s = r0_raw.sqrt().recip();
            for v in &mut psi {
                *v *= s;
            }
        }
        self.psi = psi;
        Ok(())
    }

    /// Autocovariance `r_k = sum_l psi_{l+k} psi_l` of the (possibly
    /// rescaled) process. `r_{-k} = r_k` since the taps are real.
    pub fn autocovariance(&self, lag: usize) -> f64 {
        if lag >= self.psi.len() {
            return 0.0;
        }
        self.psi[lag..]
            .iter()
            .zip(&self.psi)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Spectral density `q(u) = |p(e^{2πiu})|²` on `u` in `[0,1)`, including
    /// the unit-variance rescaling.
    pub fn spectral_density(&self, u: f64) -> f64 {
        let omega = 2.0 * std::f64::consts::PI * u;
        let eval = |coeffs: &[f64]| -> f64 {
            let mut re = 1.0;
            let mut im = 0.0;
            for (j, &c) in coeffs.iter().enumerate() {
                let phase = omega * (j + 1) as f64;
                re += c * phase.cos();
                im -= c * phase.sin();
            }
            re * re + im * im
        };
        self.density_scale * eval(&self.ma_coeffs) / eval(&self.ar_coeffs)
    }

    /// The limiting spectral measure of `R_T` as a pushforward quadrature:
    /// uniform nodes `u_i = i/M` mapped through `q`, equal weights, with the
    /// support endpoints refined to relative tolerance `1e-10`.
    pub fn build_nu(&self) -> NuQuadrature {
        if self.is_white() {
            return NuQuadrature::atom(1.0);
        }
        let m = self.quad_points;
        let nodes: Vec<f64> = (0..m)
            .map(|i| self.spectral_density(i as f64 / m as f64))
            .collect();
        let weights = vec![1.0 / m as f64; m];
        let (i_min, i_max) = {
            let mut i_min = 0;
            let mut i_max = 0;
            for (i, &t) in nodes.iter().enumerate() {
                if t < nodes[i_min] {
                    i_min = i;
                }
                if t > nodes[i_max] {
                    i_max = i;
                }
            }
            (i_min, i_max)
        };
        let step = 1.0 / m as f64;
        let refine = |i: usize, maximize: bool| -> f64 {
            let u0 = i as f64 * step;
            golden_extremum(|u| self.spectral_density(u), u0 - step, u0 + step, maximize)
        };
        let a_nu = refine(i_min, false).min(nodes[i_min]);
        let b_nu = refine(i_max, true).max(nodes[i_max]);
        NuQuadrature {
            nodes,
            weights,
            a_nu,
            b_nu,
        }
    }

    /// The `T x T` Hermitian Toeplitz covariance with first row
    /// `(r_0, ..., r_{T-1})`. Fails if the pivoted factorization detects a
    /// pivot below `-1e-10 * r_0`.
    pub fn toeplitz_covariance(&self, t: usize) -> Result<ToeplitzCovariance, NoiseModelError> {
        if t == 0 {
            return Err(NoiseModelError::InvalidParameter(
                "covariance dimension must be >= 1".into(),
            ));
        }
        let first_row: Vec<f64> = (0..t).map(|k| self.autocovariance(k)).collect();
        ToeplitzCovariance::from_first_row(first_row)
    }
}

/// True iff all roots of `z^n + b_1 z^{n-1} + ... + b_n` lie strictly inside
/// the unit circle (Schur-Cohn recursion).
fn ar_stable(ar_coeffs: &[f64]) -> bool {
    let mut a: Vec<f64> = Vec::with_capacity(ar_coeffs.len() + 1);
    a.push(1.0);
    a.extend_from_slice(ar_coeffs);
    while a.len() > 1 {
        let n = a.len() - 1;
        let k = a[n] / a[0];
        if !k.is_finite() || k.abs() >= 1.0 {
            return false;
        }
        let next: Vec<f64> = (0..n).map(|i| a[i] - k * a[n - i]).collect();
        a = next;
    }
    true
}

/// Golden-section search for a local extremum of `f` on `[lo, hi]`,
/// to relative tolerance `1e-10` on the argument.
fn golden_extremum(f: impl Fn(f64) -> f64, lo: f64, hi: f64, maximize: bool) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let sign = if maximize { 1.0 } else { -1.0 };
    let (mut a, mut b) = (lo, hi);
    let mut c = b - (b - a) * INV_PHI;
    let mut d = a + (b - a) * INV_PHI;
    let (mut fc, mut fd) = (sign * f(c), sign * f(d));
    while (b - a).abs() > 1e-10 * (a.abs().max(b.abs()).max(1e-3)) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * INV_PHI;
            fc = sign * f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * INV_PHI;
            fd = sign * f(d);
        }
    }
    f(0.5 * (a + b))
}

/// A nonnegative measure of total mass one, stored as weighted atoms.
///
/// For ARMA noise the atoms are the pushforward of a uniform grid through the
/// spectral density; for finite-horizon work they are the eigenvalues of an
/// actual `R_T`. Either way, `integrate` evaluates `∫ f dnu` as a weighted
/// sum, and `[a_nu, b_nu]` brackets the support.
#[derive(Debug, Clone, PartialEq)]
pub struct NuQuadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    a_nu: f64,
    b_nu: f64,
}

impl NuQuadrature {
    /// A single unit atom at `t` (white noise is `atom(1.0)`).
    pub fn atom(t: f64) -> Self {
        NuQuadrature {
            nodes: vec![t],
            weights: vec![1.0],
            a_nu: t,
            b_nu: t,
        }
    }

    /// Equal-weight atoms, e.g. the eigenvalues of a finite-horizon `R_T`.
    pub fn from_atoms(values: &[f64]) -> Result<Self, NoiseModelError> {
        if values.is_empty() {
            return Err(NoiseModelError::InvalidParameter(
                "empty atom list".into(),
            ));
        }
        if values.iter().any(|t| !t.is_finite() || *t < -1e-12) {
            return Err(NoiseModelError::InvalidParameter(
                "atoms must be finite and nonnegative".into(),
            ));
        }
        let a = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let b = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(NuQuadrature {
            nodes: values.to_vec(),
            weights: vec![1.0 / values.len() as f64; values.len()],
            a_nu: a.max(0.0),
            b_nu: b,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Support endpoints `(a_nu, b_nu)`.
    pub fn support(&self) -> (f64, f64) {
        (self.a_nu, self.b_nu)
    }

    pub fn is_atom(&self) -> bool {
        self.nodes.len() == 1
    }

    /// `∫ f dnu` by the stored quadrature.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }

    /// Complex-valued variant of [`integrate`](Self::integrate).
    pub fn integrate_c(
        &self,
        f: impl Fn(f64) -> num_complex::Complex64,
    ) -> num_complex::Complex64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| f(t) * w)
            .sum()
    }
}

/// Hermitian Toeplitz covariance of a real-coefficient filter: real symmetric
/// with first row `(r_0, ..., r_{T-1})`. The validating factorization is kept
/// so noise synthesis can reuse it.
#[derive(Debug, Clone)]
pub struct ToeplitzCovariance {
    first_row: Vec<f64>,
    /// Lower-triangular factor with `R = L L^T` (pivots clamped at zero).
    chol: Mat<f64>,
}

impl ToeplitzCovariance {
    pub fn from_first_row(first_row: Vec<f64>) -> Result<Self, NoiseModelError> {
        let t = first_row.len();
        if t == 0 {
            return Err(NoiseModelError::InvalidParameter(
                "covariance dimension must be >= 1".into(),
            ));
        }
        let r0 = first_row[0];
        if !(r0.is_finite() && r0 > 0.0) {
            return Err(NoiseModelError::InvalidParameter(format!(
                "lag-zero autocovariance must be positive, got {r0}"
            )));
        }
        let chol = cholesky_psd(&first_row, 1e-10 * r0)?;
        Ok(ToeplitzCovariance { first_row, chol })
    }

    pub fn dimension(&self) -> usize {
        self.first_row.len()
    }

    pub fn first_row(&self) -> &[f64] {
        &self.first_row
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.first_row[i.abs_diff(j)]
    }

    /// Lower-triangular `L` with `R = L L^T`.
    pub fn cholesky_lower(&self) -> faer::MatRef<'_, f64> {
        self.chol.as_ref()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let t = self.dimension();
        Mat::from_fn(t, t, |i, j| self.entry(i, j))
    }

    /// Eigenvalues of `R_T`, ascending. These are the atoms of the
    /// finite-horizon spectral measure.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.to_dense()
            .self_adjoint_eigenvalues(Side::Lower)
            .expect("real symmetric eigenvalues")
    }
}

/// Cholesky of a symmetric Toeplitz matrix given its first row, tolerating
/// pivots down to `-pivot_tol` (clamped to zero).
fn cholesky_psd(first_row: &[f64], pivot_tol: f64) -> Result<Mat<f64>, NoiseModelError> {
    let n = first_row.len();
    let mut l = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = first_row[0];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -pivot_tol {
            return Err(NoiseModelError::NotPositiveSemidefinite { index: j, pivot: d });
        }
        let d = d.max(0.0).sqrt();
        l[(j, j)] = d;
        if d == 0.0 {
            continue;
        }
        for i in (j + 1)..n {
            let mut v = first_row[i - j];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    Ok(l)
}
