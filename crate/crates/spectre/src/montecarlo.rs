//! Scenario synthesis and reproducible batched experiments.
//!
//! Observations are drawn from `Y = H P^{1/2} S^H + V`: unit-norm steering
//! columns, i.i.d. unit-variance symbols scaled by `T^{-1/2}`, and noise
//! rows generated exactly through the Cholesky factor of the Toeplitz
//! covariance applied to i.i.d. circular Gaussians.
//!
//! Reproducibility contract: every trial draws from a counter-derived
//! substream keyed by `(master seed, stream tag, trial index)`, trials are
//! aggregated in index order, and matrix kernels run sequentially inside a
//! trial, so reports are identical for identical configurations no matter
//! how the trials were scheduled across threads.

use crate::equilibrium::{EquilibriumContext, EquilibriumError};
use crate::fluctuations::{fluct_params, FluctuationError};
use crate::inference::{
    self, DetectionConfig, EigenDecomp, InferenceError, LocalizationScan, PowerEstimate, Whitener,
};
use crate::spectral_model::{ArmaSpec, NoiseModelError, ToeplitzCovariance};
use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::sync::Once;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum MonteCarloError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Noise(#[from] NoiseModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Fluctuation(#[from] FluctuationError),
}

/// An experiment that failed partway, carrying whatever sweep points were
/// already complete so callers can flush them.
#[derive(Debug)]
pub struct ExperimentFailure {
    pub error: MonteCarloError,
    pub partial: ExperimentReport,
}

pub type ExperimentResult = Result<ExperimentReport, Box<ExperimentFailure>>;

/// Signal constellations with the moments the second-order theory needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constellation {
    Qpsk,
    ComplexGaussian,
}

impl Constellation {
    /// Fourth-cumulant parameter `E|s|^4 - 2`.
    pub fn kappa(&self) -> f64 {
        match self {
            Constellation::Qpsk => -1.0,
            Constellation::ComplexGaussian => 0.0,
        }
    }

    /// One unit-variance symbol.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        match self {
            Constellation::Qpsk => {
                let re = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let im = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            }
            Constellation::ComplexGaussian => sample_cn(rng),
        }
    }
}

/// Standard circular complex Gaussian `CN(0, 1)`.
fn sample_cn<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Generative parameters of one observation matrix.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub n: usize,
    pub t: usize,
    /// Number of sources; amplitudes and angles must both have length `k`.
    pub k: usize,
    pub thetas_deg: Vec<f64>,
    /// Source amplitudes `a_k > 0`, descending; `SNR_k = 20 log10 a_k`
    /// against the unit-power noise.
    pub amplitudes: Vec<f64>,
    pub constellation: Constellation,
    pub noise: ArmaSpec,
    pub detection: DetectionConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), MonteCarloError> {
        let err = |msg: String| Err(MonteCarloError::InvalidScenario(msg));
        if self.n == 0 || self.t == 0 {
            return err("dimensions must be positive".into());
        }
        if self.k != self.thetas_deg.len() || self.k != self.amplitudes.len() {
            return err(format!(
                "k = {} but {} angles and {} amplitudes",
                self.k,
                self.thetas_deg.len(),
                self.amplitudes.len()
            ));
        }
        if self.k > self.detection.max_sources {
            return err(format!(
                "k = {} exceeds the detector bound L = {}",
                self.k, self.detection.max_sources
            ));
        }
        if self.n < self.detection.max_sources + 1 {
            return err(format!(
                "need n >= L + 1 = {}",
                self.detection.max_sources + 1
            ));
        }
        if self.amplitudes.iter().any(|&a| !a.is_finite() || a <= 0.0) {
            return err("amplitudes must be positive".into());
        }
        if self.amplitudes.windows(2).any(|w| w[0] < w[1]) {
            return err("amplitudes must be descending".into());
        }
        for i in 0..self.thetas_deg.len() {
            for j in (i + 1)..self.thetas_deg.len() {
                if (self.thetas_deg[i] - self.thetas_deg[j]).abs() < 1e-12 {
                    return err("source angles must be distinct".into());
                }
            }
        }
        if self.thetas_deg.iter().any(|t| !(-90.0..=90.0).contains(t)) {
            return err("angles must lie in [-90, 90] degrees".into());
        }
        Ok(())
    }

    pub fn c_t(&self) -> f64 {
        self.n as f64 / self.t as f64
    }

    /// Source powers `p_k = a_k^2`.
    pub fn powers(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a * a).collect()
    }

    /// Replaces every source amplitude according to a common SNR in dB.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        let a = 10f64.powf(snr_db / 20.0);
        for amp in &mut self.amplitudes {
            *amp = a;
        }
        self
    }

    fn noise_only(&self) -> Scenario {
        Scenario {
            k: 0,
            thetas_deg: Vec::new(),
            amplitudes: Vec::new(),
            ..self.clone()
        }
    }
}

/// Per-scenario precomputation shared by all trials: steering vectors and
/// the complex Cholesky factor of the noise covariance.
pub struct TrialSynth {
    sc: Scenario,
    /// `L^T` as a complex matrix; `None` for white noise.
    chol_rt: Option<Mat<Complex64>>,
    steering: Vec<Vec<Complex64>>,
    covariance: ToeplitzCovariance,
}

impl TrialSynth {
    pub fn new(sc: &Scenario) -> Result<Self, MonteCarloError> {
        sc.validate()?;
        let covariance = sc.noise.toeplitz_covariance(sc.t)?;
        let chol_rt = if sc.noise.is_white() {
            None
        } else {
            let l = covariance.cholesky_lower();
            Some(Mat::from_fn(sc.t, sc.t, |i, j| {
                Complex64::new(l[(j, i)], 0.0)
            }))
        };
        let steering = sc
            .thetas_deg
            .iter()
            .map(|&deg| inference::steering_vector(deg.to_radians(), sc.n))
            .collect();
        Ok(TrialSynth {
            sc: sc.clone(),
            chol_rt,
            steering,
            covariance,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    pub fn covariance(&self) -> &ToeplitzCovariance {
        &self.covariance
    }

    /// Draws one observation matrix `Y = H P^{1/2} S^H + V`.
    pub fn synth_observation<R: Rng + ?Sized>(&self, rng: &mut R) -> Mat<Complex64> {
        let (n, t) = (self.sc.n, self.sc.t);
        let scale = 1.0 / (t as f64).sqrt();
        // noise: i.i.d. CN(0, 1/T) rows times L^T (fixed fill order)
        let mut w = Mat::<Complex64>::zeros(n, t);
        for i in 0..n {
            for j in 0..t {
                w[(i, j)] = sample_cn(rng) * scale;
            }
        }
        let mut y = match &self.chol_rt {
            Some(lt) => &w * lt.as_ref(),
            None => w,
        };
        for (k, h) in self.steering.iter().enumerate() {
            let a = self.sc.amplitudes[k] * scale;
            for j in 0..t {
                let s = self.sc.constellation.sample(rng) * a;
                for i in 0..n {
                    y[(i, j)] += h[i] * s;
                }
            }
        }
        y
    }
}

/// Substream generator: ChaCha8 keyed by `(master seed, stream, trial)`
/// through a SplitMix64 expansion, independent of scheduling.
pub fn trial_rng(master: u64, stream: u64, trial: u64) -> ChaCha8Rng {
    let mut state = master
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(stream.rotate_left(17))
        .wrapping_add(trial.wrapping_mul(0xBF58476D1CE4E5B9));
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

static FAER_SEQ: Once = Once::new();

/// Runs `trials` independent trials in parallel, collecting outputs in trial
/// order. Matrix kernels are forced sequential inside trials so that thread
/// count never changes results.
pub fn run_trials<Out: Send>(
    trials: usize,
    seed: u64,
    stream: u64,
    f: impl Fn(usize, &mut ChaCha8Rng) -> Result<Out, MonteCarloError> + Sync,
) -> Result<Vec<Out>, MonteCarloError> {
    FAER_SEQ.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, stream, i as u64);
            f(i, &mut rng)
        })
        .collect()
}

/// Everything measured on one observation.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub k_hat: usize,
    pub p_hats: Vec<PowerEstimate>,
    pub theta_hats_deg: Vec<f64>,
    /// Localization function evaluated at the supplied reference angles.
    pub gamma_at_reference: Vec<f64>,
    /// Top `L + 1` eigenvalues of the sample Gram matrix.
    pub top_eigenvalues: Vec<f64>,
}

/// Full single-observation analysis: detection, powers, localization.
pub fn analyze_observation(
    eigs: &EigenDecomp,
    detection: &DetectionConfig,
    c_t: f64,
    grid: &[f64],
    reference_angles_deg: &[f64],
) -> Result<TrialOutcome, MonteCarloError> {
    let det = inference::detect_sources(eigs, detection)?;
    let k_hat = det.k_hat;
    let (p_hats, theta_hats_deg, gamma_at_reference) = if k_hat > 0 {
        let p_hats = inference::estimate_powers(eigs, k_hat, c_t)?;
        let scan = inference::music_scan(eigs, k_hat, c_t, grid)?;
        let theta_hats: Vec<f64> = scan
            .angle_estimates(k_hat)
            .into_iter()
            .map(|r| r.to_degrees())
            .collect();
        let gamma_ref = if reference_angles_deg.is_empty() {
            Vec::new()
        } else {
            let refs: Vec<f64> = reference_angles_deg
                .iter()
                .map(|d| d.to_radians())
                .collect();
            gamma_at_angles(eigs, k_hat, c_t, &refs, true)?
        };
        (p_hats, theta_hats, gamma_ref)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    let top = eigs.values()[..(detection.max_sources + 1).min(eigs.n())].to_vec();
    Ok(TrialOutcome {
        k_hat,
        p_hats,
        theta_hats_deg,
        gamma_at_reference,
        top_eigenvalues: top,
    })
}

/// Localization function at isolated angles (weighted or traditional).
fn gamma_at_angles(
    eigs: &EigenDecomp,
    k_hat: usize,
    c_t: f64,
    angles: &[f64],
    weighted: bool,
) -> Result<Vec<f64>, MonteCarloError> {
    let n = eigs.n();
    let u = eigs.vectors();
    let weights: Vec<f64> = if weighted {
        (0..k_hat)
            .map(|j| inference::spike_weight(eigs, k_hat, c_t, j))
            .collect::<Result<_, _>>()?
    } else {
        vec![1.0; k_hat]
    };
    Ok(angles
        .iter()
        .map(|&theta| {
            let h = inference::steering_vector(theta, n);
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
        .collect())
}

/// One aggregated metric at one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct PointStats {
    pub sweep: f64,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_trials: usize,
    pub theory: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<PointStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub sweep_label: String,
    pub curves: Vec<Curve>,
}

impl ExperimentReport {
    pub fn curve(&self, label: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.label == label)
    }
}

/// 95% Wald interval for a binomial proportion, clamped to `[0, 1]`.
pub fn binomial_point(sweep: f64, successes: usize, n: usize) -> PointStats {
    let p = successes as f64 / n as f64;
    let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    PointStats {
        sweep,
        value: p,
        ci_low: (p - half).max(0.0),
        ci_high: (p + half).min(1.0),
        n_trials: n,
        theory: None,
    }
}

/// Sample mean with a 95% normal interval.
pub fn mean_point(sweep: f64, samples: &[f64]) -> PointStats {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1).max(1) as f64;
    let half = 1.96 * (var / n as f64).sqrt();
    PointStats {
        sweep,
        value: mean,
        ci_low: mean - half,
        ci_high: mean + half,
        n_trials: n,
        theory: None,
    }
}

pub fn sample_variance(samples: &[f64]) -> f64 {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Standard normal CDF (Abramowitz-Stegun 7.1.26 rational approximation,
/// absolute error below 1.5e-7).
pub fn normal_cdf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.3275911 * x.abs() / std::f64::consts::SQRT_2);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-x * x / 2.0).exp();
    if x >= 0.0 {
        0.5 * (1.0 + erf)
    } else {
        0.5 * (1.0 - erf)
    }
}

/// Kolmogorov-Smirnov distance between a sample and the standard normal.
pub fn ks_normal_statistic(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal_cdf(x);
        d = d.max((cdf - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - cdf).abs());
    }
    d
}

fn fail(
    error: MonteCarloError,
    name: &str,
    sweep_label: &str,
    curves: Vec<Curve>,
) -> Box<ExperimentFailure> {
    Box::new(ExperimentFailure {
        error,
        partial: ExperimentReport {
            name: name.into(),
            sweep_label: sweep_label.into(),
            curves,
        },
    })
}

/// Detection performance versus array size at fixed ratio `c`: correct
/// detection rate on signal trials and false alarm rate on companion
/// noise-only trials, for the gap detector and the MDL/AIC baselines.
///
/// Both counters are reported: `*_cdr` is `P(k̂ = K)` and `*_cdr_geq` the
/// alternative reading `P(k̂ >= K)`.
pub fn run_detection_experiment(
    base: &Scenario,
    n_values: &[usize],
    trials: usize,
    seed: u64,
) -> ExperimentResult {
    let name = "detection";
    let sweep = "n";
    base.validate()
        .map_err(|e| fail(e, name, sweep, Vec::new()))?;
    let c = base.c_t();
    let l = base.detection.max_sources;
    let labels = ["proposed", "mdl", "aic"];
    let mut cdr: Vec<Vec<PointStats>> = vec![Vec::new(); 3];
    let mut cdr_geq: Vec<Vec<PointStats>> = vec![Vec::new(); 3];
    let mut far: Vec<Vec<PointStats>> = vec![Vec::new(); 3];
    let flush = |cdr: &[Vec<PointStats>], cdr_geq: &[Vec<PointStats>], far: &[Vec<PointStats>]| {
        let mut curves = Vec::new();
        for (i, lab) in labels.iter().enumerate() {
            curves.push(Curve {
                label: format!("{lab}_cdr"),
                points: cdr[i].clone(),
            });
            curves.push(Curve {
                label: format!("{lab}_cdr_geq"),
                points: cdr_geq[i].clone(),
            });
            curves.push(Curve {
                label: format!("{lab}_far"),
                points: far[i].clone(),
            });
        }
        curves
    };
    for &n in n_values {
        let t = (n as f64 / c).round() as usize;
        let sc = Scenario {
            n,
            t,
            ..base.clone()
        };
        let point = (|| -> Result<_, MonteCarloError> {
            let synth = TrialSynth::new(&sc)?;
            let noise_synth = TrialSynth::new(&sc.noise_only())?;
            let k_true = sc.k;
            let detect_all = |synth: &TrialSynth, stream: u64| {
                run_trials(trials, seed, stream, |_, rng| {
                    let y = synth.synth_observation(rng);
                    let eigs = inference::sample_gram_eigs(y.as_ref())?;
                    let det = inference::detect_sources(&eigs, &sc.detection)?;
                    Ok((
                        det.k_hat,
                        inference::mdl_estimate(&eigs, sc.t, l),
                        inference::aic_estimate(&eigs, sc.t, l),
                    ))
                })
            };
            let signal = detect_all(&synth, 0x51F0 ^ n as u64)?;
            let noise = detect_all(&noise_synth, 0x0FA2 ^ n as u64)?;
            let mut out = Vec::new();
            for d in 0..3 {
                let pick = |r: &(usize, usize, usize)| match d {
                    0 => r.0,
                    1 => r.1,
                    _ => r.2,
                };
                let eq = signal.iter().filter(|r| pick(r) == k_true).count();
                let geq = signal.iter().filter(|r| pick(r) >= k_true).count();
                let fa = noise.iter().filter(|r| pick(r) >= 1).count();
                out.push((
                    binomial_point(n as f64, eq, trials),
                    binomial_point(n as f64, geq, trials),
                    binomial_point(n as f64, fa, trials),
                ));
            }
            Ok(out)
        })();
        match point {
            Ok(stats) => {
                for (d, (a, b, f)) in stats.into_iter().enumerate() {
                    cdr[d].push(a);
                    cdr_geq[d].push(b);
                    far[d].push(f);
                }
            }
            Err(e) => return Err(fail(e, name, sweep, flush(&cdr, &cdr_geq, &far))),
        }
    }
    Ok(ExperimentReport {
        name: name.into(),
        sweep_label: sweep.into(),
        curves: flush(&cdr, &cdr_geq, &far),
    })
}

/// ROC curves parameterized by the gap threshold `epsilon`, for the raw
/// detector and the oracle (noise covariance known, observations whitened).
/// The eigenvalue ratios are computed once per trial and swept afterwards.
pub fn run_roc_experiment(
    sc: &Scenario,
    epsilons: &[f64],
    trials: usize,
    seed: u64,
) -> ExperimentResult {
    let name = "roc";
    let sweep = "epsilon";
    let run = (|| -> Result<Vec<Curve>, MonteCarloError> {
        sc.validate()?;
        let synth = TrialSynth::new(sc)?;
        let noise_synth = TrialSynth::new(&sc.noise_only())?;
        let whitener = Whitener::new(synth.covariance())?;
        let k_true = sc.k;
        let per_trial = |synth: &TrialSynth,
                         rng: &mut ChaCha8Rng|
         -> Result<(Vec<f64>, Vec<f64>), MonteCarloError> {
            let y = synth.synth_observation(rng);
            let eigs = inference::sample_gram_eigs(y.as_ref())?;
            let det = inference::detect_sources(&eigs, &sc.detection)?;
            let yw = whitener.apply(y.as_ref())?;
            let eigs_w = inference::sample_gram_eigs(yw.as_ref())?;
            let det_w = inference::detect_sources(&eigs_w, &sc.detection)?;
            Ok((det.ratios, det_w.ratios))
        };
        let signal = run_trials(trials, seed, 0x1200, |_, rng| per_trial(&synth, rng))?;
        let noise = run_trials(trials, seed, 0x3400, |_, rng| per_trial(&noise_synth, rng))?;
        let mut curves: Vec<Curve> = [
            "proposed_far",
            "proposed_cdr",
            "proposed_cdr_geq",
            "proposed_edge_far",
            "proposed_edge_cdr",
            "oracle_far",
            "oracle_cdr",
            "oracle_cdr_geq",
            "oracle_edge_far",
            "oracle_edge_cdr",
        ]
        .iter()
        .map(|l| Curve {
            label: l.to_string(),
            points: Vec::new(),
        })
        .collect();
        for &eps in epsilons {
            let count =
                |rows: &[(Vec<f64>, Vec<f64>)], whitened: bool, pred: &dyn Fn(usize) -> bool| {
                    rows.iter()
                        .filter(|(raw, w)| {
                            pred(inference::k_hat_from_ratios(
                                if whitened { w } else { raw },
                                eps,
                            ))
                        })
                        .count()
                };
            // bulk-edge statistic: the product of the consecutive ratios is
            // λ̂_1/λ̂_{L+1}, the other reading of the gap test
            let edge_count = |rows: &[(Vec<f64>, Vec<f64>)], whitened: bool| {
                rows.iter()
                    .filter(|(raw, w)| {
                        let r = if whitened { w } else { raw };
                        r.iter().product::<f64>() > 1.0 + eps
                    })
                    .count()
            };
            for (idx, whitened) in [(0usize, false), (5usize, true)] {
                let fa = count(&noise, whitened, &|k| k >= 1);
                let eq = count(&signal, whitened, &|k| k == k_true);
                let geq = count(&signal, whitened, &|k| k >= k_true);
                curves[idx].points.push(binomial_point(eps, fa, trials));
                curves[idx + 1].points.push(binomial_point(eps, eq, trials));
                curves[idx + 2]
                    .points
                    .push(binomial_point(eps, geq, trials));
                curves[idx + 3]
                    .points
                    .push(binomial_point(eps, edge_count(&noise, whitened), trials));
                curves[idx + 4]
                    .points
                    .push(binomial_point(eps, edge_count(&signal, whitened), trials));
            }
        }
        Ok(curves)
    })();
    match run {
        Ok(curves) => Ok(ExperimentReport {
            name: name.into(),
            sweep_label: sweep.into(),
            curves,
        }),
        Err(e) => Err(fail(e, name, sweep, Vec::new())),
    }
}

/// Normalized mean square error of the power estimate versus SNR, with the
/// deterministic second-order prediction overlaid. Detection is forced
/// (`k̂ = 1`), isolating estimation error from detection error.
pub fn run_power_nmse_experiment(
    sc: &Scenario,
    snr_db_values: &[f64],
    trials: usize,
    seed: u64,
) -> ExperimentResult {
    let name = "power_nmse";
    let sweep = "snr_db";
    sc.validate().map_err(|e| fail(e, name, sweep, Vec::new()))?;
    if sc.k != 1 {
        return Err(fail(
            MonteCarloError::InvalidScenario(
                "power NMSE experiment needs exactly one source".into(),
            ),
            name,
            sweep,
            Vec::new(),
        ));
    }
    let kappa = sc.constellation.kappa();
    let c = sc.c_t();
    let mut proposed = Vec::new();
    let mut oracle = Vec::new();
    // finite-horizon prediction contexts: the atom measure of R_T for the
    // raw data; whitening turns the covariance into the identity, whose
    // atom measure is a single unit mass
    let theory_ctx = (|| -> Result<_, MonteCarloError> {
        let r = sc.noise.toeplitz_covariance(sc.t)?;
        Ok(EquilibriumContext::finite_horizon(&r.eigenvalues(), c)?)
    })()
    .map_err(|e| fail(e, name, sweep, Vec::new()))?;
    let white_ctx =
        EquilibriumContext::white(c).map_err(|e| fail(e.into(), name, sweep, Vec::new()))?;
    // The oracle estimates on the equivalent white-noise system: whitening
    // with the true covariance leaves white noise and an effective source
    // power boosted by tr(R^-1)/T, and the oracle symbols are i.i.d. in that
    // domain.
    let gain = {
        let r = sc
            .noise
            .toeplitz_covariance(sc.t)
            .map_err(|e| fail(e.into(), name, sweep, Vec::new()))?;
        r.eigenvalues().iter().map(|l| 1.0 / l).sum::<f64>() / sc.t as f64
    };
    for &snr in snr_db_values {
        let point = (|| -> Result<_, MonteCarloError> {
            let sc_snr = sc.clone().with_snr_db(snr);
            let p = sc_snr.powers()[0];
            let synth = TrialSynth::new(&sc_snr)?;
            let sc_white = Scenario {
                noise: ArmaSpec::white_noise(),
                amplitudes: vec![(p * gain).sqrt()],
                ..sc_snr.clone()
            };
            let synth_white = TrialSynth::new(&sc_white)?;
            let rows = run_trials(trials, seed, 0x9000 ^ snr.to_bits(), |_, rng| {
                let y = synth.synth_observation(rng);
                let eigs = inference::sample_gram_eigs(y.as_ref())?;
                let p_hat = inference::estimate_powers(&eigs, 1, c)?[0].value;
                let yw = synth_white.synth_observation(rng);
                let eigs_w = inference::sample_gram_eigs(yw.as_ref())?;
                let p_hat_o = inference::estimate_powers(&eigs_w, 1, c)?[0].value / gain;
                Ok((((p_hat - p) / p).powi(2), ((p_hat_o - p) / p).powi(2)))
            })?;
            let sq_prop: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let sq_orc: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let mut pt_prop = mean_point(snr, &sq_prop);
            pt_prop.theory = fluct_params(&theory_ctx, p, kappa)
                .ok()
                .map(|f| f.predicted_nmse(sc.t));
            let mut pt_orc = mean_point(snr, &sq_orc);
            pt_orc.theory = fluct_params(&white_ctx, p * gain, kappa)
                .ok()
                .map(|f| f.predicted_nmse(sc.t));
            Ok((pt_prop, pt_orc))
        })();
        match point {
            Ok((a, b)) => {
                proposed.push(a);
                oracle.push(b);
            }
            Err(e) => {
                let curves = vec![
                    Curve {
                        label: "proposed".into(),
                        points: proposed,
                    },
                    Curve {
                        label: "oracle".into(),
                        points: oracle,
                    },
                ];
                return Err(fail(e, name, sweep, curves));
            }
        }
    }
    Ok(ExperimentReport {
        name: name.into(),
        sweep_label: sweep.into(),
        curves: vec![
            Curve {
                label: "proposed".into(),
                points: proposed,
            },
            Curve {
                label: "oracle".into(),
                points: oracle,
            },
        ],
    })
}

/// Mean square error of the localization function at the true angle versus
/// SNR (single source, forced detection), for the weighted estimator, the
/// traditional unweighted one, and the whitened oracle.
pub fn run_music_mse_experiment(
    sc: &Scenario,
    snr_db_values: &[f64],
    trials: usize,
    seed: u64,
) -> ExperimentResult {
    let name = "music_mse";
    let sweep = "snr_db";
    sc.validate().map_err(|e| fail(e, name, sweep, Vec::new()))?;
    if sc.k != 1 {
        return Err(fail(
            MonteCarloError::InvalidScenario(
                "localization MSE experiment needs exactly one source".into(),
            ),
            name,
            sweep,
            Vec::new(),
        ));
    }
    let c = sc.c_t();
    let theta = [sc.thetas_deg[0].to_radians()];
    let mut curves: Vec<Curve> = ["proposed", "traditional", "oracle"]
        .iter()
        .map(|l| Curve {
            label: l.to_string(),
            points: Vec::new(),
        })
        .collect();
    for &snr in snr_db_values {
        let point = (|| -> Result<_, MonteCarloError> {
            let sc_snr = sc.clone().with_snr_db(snr);
            let synth = TrialSynth::new(&sc_snr)?;
            let whitener = Whitener::new(synth.covariance())?;
            let rows = run_trials(trials, seed, 0xA100 ^ snr.to_bits(), |_, rng| {
                let y = synth.synth_observation(rng);
                let eigs = inference::sample_gram_eigs(y.as_ref())?;
                let gamma_prop = gamma_at_angles(&eigs, 1, c, &theta, true)?[0];
                let gamma_trad = gamma_at_angles(&eigs, 1, c, &theta, false)?[0];
                let yw = whitener.apply(y.as_ref())?;
                let eigs_w = inference::sample_gram_eigs(yw.as_ref())?;
                let gamma_orc = gamma_at_angles(&eigs_w, 1, c, &theta, true)?[0];
                // the true localization value is 1: unit-norm steering, K = 1
                Ok((
                    (gamma_prop - 1.0).powi(2),
                    (gamma_trad - 1.0).powi(2),
                    (gamma_orc - 1.0).powi(2),
                ))
            })?;
            Ok([
                mean_point(snr, &rows.iter().map(|r| r.0).collect::<Vec<_>>()),
                mean_point(snr, &rows.iter().map(|r| r.1).collect::<Vec<_>>()),
                mean_point(snr, &rows.iter().map(|r| r.2).collect::<Vec<_>>()),
            ])
        })();
        match point {
            Ok(pts) => {
                for (curve, p) in curves.iter_mut().zip(pts) {
                    curve.points.push(p);
                }
            }
            Err(e) => return Err(fail(e, name, sweep, curves)),
        }
    }
    Ok(ExperimentReport {
        name: name.into(),
        sweep_label: sweep.into(),
        curves,
    })
}

/// Probability of resolving two close sources: success means the
/// localization function has exactly two local maxima inside the scan
/// window. Detection is forced (`k̂ = 2`).
pub fn run_resolution_experiment(
    sc: &Scenario,
    snr_db_values: &[f64],
    trials: usize,
    seed: u64,
    window_deg: (f64, f64),
    step_deg: f64,
) -> ExperimentResult {
    let name = "resolution";
    let sweep = "snr_db";
    sc.validate().map_err(|e| fail(e, name, sweep, Vec::new()))?;
    if sc.k != 2 {
        return Err(fail(
            MonteCarloError::InvalidScenario(
                "resolution experiment needs exactly two sources".into(),
            ),
            name,
            sweep,
            Vec::new(),
        ));
    }
    let c = sc.c_t();
    let grid = inference::angle_grid_deg(window_deg.0, window_deg.1, step_deg);
    let mut curves: Vec<Curve> = ["proposed", "traditional", "oracle"]
        .iter()
        .map(|l| Curve {
            label: l.to_string(),
            points: Vec::new(),
        })
        .collect();
    let resolved = |scan: &LocalizationScan| scan.peaks.len() == 2;
    for &snr in snr_db_values {
        let point = (|| -> Result<_, MonteCarloError> {
            let sc_snr = sc.clone().with_snr_db(snr);
            let synth = TrialSynth::new(&sc_snr)?;
            let whitener = Whitener::new(synth.covariance())?;
            let rows = run_trials(trials, seed, 0xB200 ^ snr.to_bits(), |_, rng| {
                let y = synth.synth_observation(rng);
                let eigs = inference::sample_gram_eigs(y.as_ref())?;
                let prop = resolved(&inference::music_scan(&eigs, 2, c, &grid)?);
                let trad = resolved(&inference::traditional_music_scan(&eigs, 2, &grid)?);
                let yw = whitener.apply(y.as_ref())?;
                let eigs_w = inference::sample_gram_eigs(yw.as_ref())?;
                let orc = resolved(&inference::music_scan(&eigs_w, 2, c, &grid)?);
                Ok((prop, trad, orc))
            })?;
            Ok([
                binomial_point(snr, rows.iter().filter(|r| r.0).count(), trials),
                binomial_point(snr, rows.iter().filter(|r| r.1).count(), trials),
                binomial_point(snr, rows.iter().filter(|r| r.2).count(), trials),
            ])
        })();
        match point {
            Ok(pts) => {
                for (curve, p) in curves.iter_mut().zip(pts) {
                    curve.points.push(p);
                }
            }
            Err(e) => return Err(fail(e, name, sweep, curves)),
        }
    }
    Ok(ExperimentReport {
        name: name.into(),
        sweep_label: sweep.into(),
        curves,
    })
}

/// Samples of the fluctuation statistics of one isolated eigenvalue and its
/// power estimate.
#[derive(Debug, Clone)]
pub struct FluctuationSamples {
    pub eig: Vec<f64>,
    pub power: Vec<f64>,
    /// Finite-horizon centering value for the eigenvalue samples.
    pub rho_t: f64,
}

/// Collects `sqrt(T)(λ̂_1 - ρ_T)` and `sqrt(T)(p̂_1 - p)` samples (forced
/// `k̂ = 1`), centered at the finite-horizon spike location.
pub fn collect_fluctuation_samples(
    sc: &Scenario,
    trials: usize,
    seed: u64,
) -> Result<FluctuationSamples, MonteCarloError> {
    sc.validate()?;
    if sc.k != 1 {
        return Err(MonteCarloError::InvalidScenario(
            "fluctuation experiment needs exactly one source".into(),
        ));
    }
    let c = sc.c_t();
    let p = sc.powers()[0];
    let synth = TrialSynth::new(sc)?;
    let fh = EquilibriumContext::finite_horizon(&synth.covariance().eigenvalues(), c)?;
    let rho_t = fh.spike_location(p)?;
    let sqrt_t = (sc.t as f64).sqrt();
    let rows = run_trials(trials, seed, 0xF1C7, |_, rng| {
        let y = synth.synth_observation(rng);
        let eigs = inference::sample_gram_eigs(y.as_ref())?;
        let p_hat = inference::estimate_powers(&eigs, 1, c)?[0].value;
        Ok((sqrt_t * (eigs.value(0) - rho_t), sqrt_t * (p_hat - p)))
    })?;
    Ok(FluctuationSamples {
        eig: rows.iter().map(|r| r.0).collect(),
        power: rows.iter().map(|r| r.1).collect(),
        rho_t,
    })
}

/// Fluctuation experiment: empirical variances of the spike statistics
/// against their second-order predictions, plus a Kolmogorov-Smirnov
/// normality statistic for the standardized eigenvalue fluctuations.
pub fn run_fluctuation_experiment(sc: &Scenario, trials: usize, seed: u64) -> ExperimentResult {
    let name = "fluctuation";
    let sweep = "n";
    let run = (|| -> Result<Vec<Curve>, MonteCarloError> {
        let samples = collect_fluctuation_samples(sc, trials, seed)?;
        let c = sc.c_t();
        let p = sc.powers()[0];
        let cov = sc.noise.toeplitz_covariance(sc.t)?;
        let fh = EquilibriumContext::finite_horizon(&cov.eigenvalues(), c)?;
        let params = fluct_params(&fh, p, sc.constellation.kappa())?;
        let n = sc.n as f64;
        let eig_var = sample_variance(&samples.eig);
        let pow_var = sample_variance(&samples.power);
        let sd = params.eigenvalue_variance().sqrt();
        let standardized: Vec<f64> = samples.eig.iter().map(|x| x / sd).collect();
        let ks = ks_normal_statistic(&standardized);
        let curve = |label: &str, value: f64, theory: Option<f64>| Curve {
            label: label.into(),
            points: vec![PointStats {
                sweep: n,
                value,
                ci_low: value,
                ci_high: value,
                n_trials: trials,
                theory,
            }],
        };
        Ok(vec![
            curve("eig_var", eig_var, Some(params.eigenvalue_variance())),
            curve("power_var", pow_var, Some(params.power_variance())),
            curve("ks_stat", ks, None),
        ])
    })();
    match run {
        Ok(curves) => Ok(ExperimentReport {
            name: name.into(),
            sweep_label: sweep.into(),
            curves,
        }),
        Err(e) => Err(fail(e, name, sweep, Vec::new())),
    }
}
