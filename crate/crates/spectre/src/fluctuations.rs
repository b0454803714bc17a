//! Second-order theory: variance coefficients for the isolated eigenvalues
//! and the power estimates, the Hermitian Gaussian sampler for multiplicity
//! `j > 1`, and the oracle whitening SNR-gap formula.
//!
//! For a source group of power `p` with spike location `ρ`, the centered and
//! `sqrt(T)`-scaled eigenvalues fluctuate like the ordered eigenvalues of
//! `(p g'(ρ))^{-1} M` where `M` is Hermitian with independent Gaussian
//! entries: diagonal variance `ψ = α + β + κ φ`, off-diagonal variance
//! `ψ̆ = α + β`. The power estimates fluctuate like the eigenvalues of
//! `p M`. The coefficient `κ = E|s|⁴ - 2` is the fourth-cumulant parameter
//! of the signal constellation (`-1` for QPSK, `0` for circular Gaussian).

use crate::equilibrium::{EquilibriumContext, EquilibriumError};
use crate::spectral_model::ArmaSpec;
use faer::{Mat, Side};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum FluctuationError {
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error("spectral density reaches {q_min:.3e}; the whitening gain integral diverges")]
    DegenerateDensity { q_min: f64 },
}

/// Variance coefficients of the spike limit law at one source power.
#[derive(Debug, Clone, Copy)]
pub struct FluctuationParams {
    pub alpha: f64,
    pub beta: f64,
    pub phi: f64,
    /// Fourth-cumulant parameter of the constellation.
    pub kappa: f64,
    /// Diagonal variance `alpha + beta + kappa * phi`.
    pub psi: f64,
    /// Off-diagonal variance `alpha + beta`.
    pub psi_breve: f64,
    pub p: f64,
    pub rho: f64,
    pub g_prime_at_rho: f64,
}

/// Evaluates the variance coefficients at the spike of a source with power
/// `p`. Fails for subcritical `p`.
pub fn fluct_params(
    ctx: &EquilibriumContext,
    p: f64,
    kappa: f64,
) -> Result<FluctuationParams, FluctuationError> {
    let rho = ctx.spike_location(p)?;
    let ev = ctx.eval(rho)?;
    let (m, c) = (ev.m, ctx.c());
    let nu = ctx.nu();
    let i_quad = nu.integrate(|t| (t * t + 2.0 * p * t) / (1.0 + c * m * t).powi(2));
    let i_cross = nu.integrate(|t| p * m * t / (1.0 + c * m * t).powi(2));
    let alpha = m * m / ev.delta * (i_quad + c * i_cross * i_cross);
    let beta = nu.integrate(|t| (p * m / (1.0 + c * m * t)).powi(2));
    let phi = nu.integrate(|t| p * m / (1.0 + c * m * t)).powi(2);
    Ok(FluctuationParams {
        alpha,
        beta,
        phi,
        kappa,
        psi: alpha + beta + kappa * phi,
        psi_breve: alpha + beta,
        p,
        rho,
        g_prime_at_rho: ev.g_prime,
    })
}

impl FluctuationParams {
    /// Predicted variance of `sqrt(T) (λ̂ - ρ_T)` for a simple spike:
    /// `ψ / (p g'(ρ))²`.
    pub fn eigenvalue_variance(&self) -> f64 {
        self.psi / (self.p * self.g_prime_at_rho).powi(2)
    }

    /// Predicted variance of `sqrt(T) (p̂ - p)` for a simple spike: `p² ψ`.
    pub fn power_variance(&self) -> f64 {
        self.p * self.p * self.psi
    }

    /// Predicted normalized mean square error of the power estimate at
    /// horizon `T`: `ψ / T`.
    pub fn predicted_nmse(&self, t: usize) -> f64 {
        self.psi / t as f64
    }
}

/// Draws the Hermitian Gaussian matrix governing a multiplicity-`j` group:
/// real `N(0, ψ)` diagonal, circular `CN(0, ψ̆)` strict upper triangle.
pub fn sample_fluct_matrix<R: Rng + ?Sized>(
    params: &FluctuationParams,
    j: usize,
    rng: &mut R,
) -> Mat<Complex64> {
    let sd_diag = params.psi.max(0.0).sqrt();
    let sd_off = (params.psi_breve.max(0.0) / 2.0).sqrt();
    let mut m = Mat::<Complex64>::zeros(j, j);
    for i in 0..j {
        let d: f64 = rng.sample(StandardNormal);
        m[(i, i)] = Complex64::new(sd_diag * d, 0.0);
        for k in (i + 1)..j {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = Complex64::new(sd_off * re, sd_off * im);
            m[(i, k)] = z;
            m[(k, i)] = z.conj();
        }
    }
    m
}

fn sorted_eigenvalues(m: &Mat<Complex64>) -> Vec<f64> {
    let j = m.nrows();
    if j == 1 {
        return vec![m[(0, 0)].re];
    }
    let mut ev: Vec<f64> = {
        let evd = m
            .self_adjoint_eigen(Side::Lower)
            .expect("finite Hermitian matrix");
        (0..j).map(|i| evd.S()[i].re).collect()
    };
    ev.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    ev
}

/// One draw of the limiting law of `sqrt(T)(λ̂ - ρ_T)` for a group of
/// multiplicity `j`: the ordered eigenvalues of `(p g'(ρ))^{-1} M`.
pub fn sample_eigenvalue_fluctuations<R: Rng + ?Sized>(
    params: &FluctuationParams,
    j: usize,
    rng: &mut R,
) -> Vec<f64> {
    let m = sample_fluct_matrix(params, j, rng);
    let scale = 1.0 / (params.p * params.g_prime_at_rho);
    let mut ev: Vec<f64> = sorted_eigenvalues(&m).into_iter().map(|x| x * scale).collect();
    // a negative scale (g' < 0) flips the ordering
    ev.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    ev
}

/// One draw of the limiting law of `sqrt(T)(p̂ - p)` for a group of
/// multiplicity `j`: the ordered eigenvalues of `p M`.
pub fn sample_power_fluctuations<R: Rng + ?Sized>(
    params: &FluctuationParams,
    j: usize,
    rng: &mut R,
) -> Vec<f64> {
    let m = sample_fluct_matrix(params, j, rng);
    sorted_eigenvalues(&m).into_iter().map(|x| x * params.p).collect()
}

/// Limiting SNR gap (dB) between raw and oracle-whitened estimation:
/// `10 log10( ∫ q du · ∫ q^{-1} du )`. Diverges when the spectral density
/// touches zero.
pub fn snr_gap_db(noise: &ArmaSpec) -> Result<f64, FluctuationError> {
    let nu = noise.build_nu();
    let (a_nu, _) = nu.support();
    if a_nu <= 1e-12 {
        return Err(FluctuationError::DegenerateDensity { q_min: a_nu });
    }
    let first = nu.integrate(|t| t);
    let inv = nu.integrate(|t| 1.0 / t);
    Ok(10.0 * (first * inv).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ar_ctx(a: f64, c: f64) -> EquilibriumContext {
        EquilibriumContext::from_noise(&ArmaSpec::ar1(a).unwrap(), c).unwrap()
    }

    #[test]
    fn phi_is_one_at_the_spike() {
        // p g(rho) = 1 forces the phi integral to (p g(rho))^2 = 1; checked
        // against an independent quadrature with doubled node count.
        for (a, c, p) in [(0.0, 0.5, 2.0), (0.6, 0.5, 4.0), (0.3, 0.2, 1.5)] {
            let spec = if a == 0.0 {
                ArmaSpec::white_noise()
            } else {
                ArmaSpec::ar1(a).unwrap()
            };
            let ctx = EquilibriumContext::from_noise(&spec, c).unwrap();
            let params = fluct_params(&ctx, p, -1.0).unwrap();
            assert!((params.phi - 1.0).abs() < 1e-8, "phi = {}", params.phi);
            if a != 0.0 {
                let fine = ArmaSpec::with_options(vec![], vec![-a], true, 1 << 20, 4096).unwrap();
                let fine_ctx = EquilibriumContext::from_noise(&fine, c).unwrap();
                let fine_params = fluct_params(&fine_ctx, p, -1.0).unwrap();
                assert!((params.phi - fine_params.phi).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn alpha_two_route_agreement() {
        // Delta from the context vs the inline integral route.
        let ctx = ar_ctx(0.6, 0.5);
        let p = 5.0;
        let params = fluct_params(&ctx, p, 0.0).unwrap();
        let rho = params.rho;
        let m = ctx.m_of_x(rho).unwrap();
        let c = ctx.c();
        let delta_inline = 1.0
            - c * ctx.nu().integrate(|t| {
                let r = m * t / (1.0 + c * m * t);
                r * r
            });
        let i_quad = ctx
            .nu()
            .integrate(|t| (t * t + 2.0 * p * t) / (1.0 + c * m * t).powi(2));
        let i_cross = ctx
            .nu()
            .integrate(|t| p * m * t / (1.0 + c * m * t).powi(2));
        let alpha_inline = m * m / delta_inline * (i_quad + c * i_cross * i_cross);
        assert!((params.alpha - alpha_inline).abs() < 1e-8);
    }

    #[test]
    fn psi_diverges_at_threshold() {
        let ctx = EquilibriumContext::white(0.5).unwrap();
        let p_lim = ctx.detectability_threshold().unwrap();
        let params = fluct_params(&ctx, 1.001 * p_lim, -1.0).unwrap();
        assert!(params.psi > 1e3, "psi = {}", params.psi);
        assert!(matches!(
            fluct_params(&ctx, 0.9 * p_lim, -1.0),
            Err(FluctuationError::Equilibrium(
                EquilibriumError::Subcritical { .. }
            ))
        ));
    }

    #[test]
    fn psi_limits_at_large_power() {
        let ctx = ar_ctx(0.6, 0.5);
        let params = fluct_params(&ctx, 1e6, -1.0).unwrap();
        assert!(params.psi.abs() < 1e-2, "psi = {}", params.psi);
        assert!((params.psi_breve - 1.0).abs() < 1e-2);
        assert!(params.beta > 0.0 && params.phi > 0.0 && params.psi_breve > 0.0);
    }

    #[test]
    fn variance_predictions_positive_and_linear_in_kappa() {
        let ctx = ar_ctx(0.6, 0.5);
        let p_lim = ctx.detectability_threshold().unwrap();
        for i in 1..=10 {
            let p = p_lim * (1.0 + i as f64);
            let v0 = fluct_params(&ctx, p, 0.0).unwrap();
            let v1 = fluct_params(&ctx, p, -1.0).unwrap();
            assert!(v0.eigenvalue_variance() > 0.0);
            assert!(v0.power_variance() > 0.0);
            let diff = v0.eigenvalue_variance() - v1.eigenvalue_variance();
            let expect = v0.phi / (v0.p * v0.g_prime_at_rho).powi(2);
            assert!((diff - expect).abs() < 1e-10 * expect.max(1.0));
        }
    }

    #[test]
    fn predicted_nmse_matches_reference_curve() {
        // finite-horizon measure of the T = 40 covariance, c_T = 0.5
        let spec = ArmaSpec::ar1(0.6).unwrap();
        let eigs = spec.toeplitz_covariance(40).unwrap().eigenvalues();
        let ctx = EquilibriumContext::finite_horizon(&eigs, 0.5).unwrap();
        let at_10db = fluct_params(&ctx, 10.0, -1.0).unwrap().predicted_nmse(40);
        assert!(
            (at_10db - 0.006508).abs() < 1e-4,
            "NMSE(10 dB) = {at_10db}"
        );
        let at_6db = fluct_params(&ctx, 10f64.powf(0.6), -1.0)
            .unwrap()
            .predicted_nmse(40);
        assert!(
            (at_6db - 0.028294).abs() / 0.028294 < 0.03,
            "NMSE(6 dB) = {at_6db}"
        );
    }

    #[test]
    fn nmse_slope_is_ten_db_per_decade_for_qpsk() {
        // with kappa = -1, psi ~ Delta psi ~ 1/p at large p, so NMSE * p is
        // roughly constant across decades
        let ctx = EquilibriumContext::white(0.5).unwrap();
        let products: Vec<f64> = [1e2, 1e3, 1e4]
            .iter()
            .map(|&p| fluct_params(&ctx, p, -1.0).unwrap().predicted_nmse(40) * p)
            .collect();
        for w in products.windows(2) {
            assert!(
                (w[1] / w[0] - 1.0).abs() < 0.05,
                "products not flat: {products:?}"
            );
        }
    }

    #[test]
    fn sampler_scalar_case_matches_psi() {
        let ctx = ar_ctx(0.6, 0.5);
        let params = fluct_params(&ctx, 6.0, -1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let m = sample_fluct_matrix(&params, 1, &mut rng);
            let v = m[(0, 0)].re;
            sum += v;
            sum2 += v * v;
        }
        let var = sum2 / n as f64 - (sum / n as f64).powi(2);
        assert!(
            (var - params.psi).abs() < 0.02 * params.psi,
            "var {var} psi {}",
            params.psi
        );
    }

    #[test]
    fn sampler_eigenvalues_sorted() {
        let ctx = ar_ctx(0.6, 0.5);
        let params = fluct_params(&ctx, 6.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let chi = sample_eigenvalue_fluctuations(&params, 3, &mut rng);
            assert!(chi.windows(2).all(|w| w[0] >= w[1]));
            let chk = sample_power_fluctuations(&params, 3, &mut rng);
            assert!(chk.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn snr_gap_values() {
        assert!(snr_gap_db(&ArmaSpec::white_noise()).unwrap().abs() < 1e-12);
        let gap = snr_gap_db(&ArmaSpec::ar1(0.6).unwrap()).unwrap();
        let expect = 10.0 * (2.125f64).log10();
        assert!((gap - expect).abs() < 1e-6, "gap {gap} expect {expect}");
        // increasing in the correlation parameter
        let mut prev = 0.0;
        for i in 1..=8 {
            let a = 0.1 * i as f64;
            let g = snr_gap_db(&ArmaSpec::ar1(a).unwrap()).unwrap();
            assert!(g > prev, "gap not increasing at a = {a}");
            prev = g;
        }
    }

    #[test]
    fn snr_gap_rejects_vanishing_density() {
        // MA(1) with unit root: q(1/2) = 0
        let spec = ArmaSpec::new(vec![1.0], vec![]).unwrap();
        assert!(matches!(
            snr_gap_db(&spec),
            Err(FluctuationError::DegenerateDensity { .. })
        ));
    }
}
