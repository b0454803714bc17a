//! Eigen-inference for large sensor arrays under unknown temporally
//! correlated noise.
//!
//! The observation model is an information-plus-noise matrix
//! `Y = H P^{1/2} S^H + V` where the noise `V = W R^{1/2}` is white in space
//! but correlated in time through the Toeplitz covariance `R` of a stationary
//! ARMA process. When the array dimension `N` and the sample count `T` grow
//! at a fixed ratio `c = N/T`, the noise eigenvalues of `Y Y^H` concentrate
//! on a compact bulk while sufficiently strong sources give rise to isolated
//! eigenvalues beyond the right edge of that bulk. Everything in this crate
//! derives from that separation:
//!
//! * [`spectral_model`]: the ARMA noise process, its Toeplitz covariance,
//!   and the limiting spectral measure of `R` as a quadrature object.
//! * [`equilibrium`]: the deterministic limit, i.e. Stieltjes transforms,
//!   the bulk edge, spike locations and the source detectability threshold.
//! * [`inference`]: data-driven estimators for source counting, power
//!   estimation, subspace bilinear forms and a MUSIC variant that stays
//!   consistent under the correlated noise, plus MDL/AIC baselines.
//! * [`fluctuations`]: second-order theory, variance predictions for the
//!   isolated eigenvalues and the power estimates.
//! * [`montecarlo`]: scenario synthesis and reproducible batched
//!   experiments (detection rates, ROC, NMSE, localization, resolution).
//! * [`cli`]: configuration, matrix file I/O and the `spectre` binary.
//!
//! A guided tour lives in the `book/` directory of the repository; its code
//! snippets compile and run as doc-tests of this crate.

pub mod cli;
pub mod equilibrium;
pub mod fluctuations;
pub mod inference;
pub mod montecarlo;
pub mod spectral_model;

pub use equilibrium::{EdgeSolution, EquilibriumContext, SolverConfig};
pub use fluctuations::{fluct_params, snr_gap_db, FluctuationParams};
pub use inference::{
    detect_sources, estimate_powers, music_scan, sample_gram_eigs, DetectionConfig,
    DetectionResult, EigenDecomp, LocalizationScan,
};
pub use montecarlo::{Constellation, ExperimentReport, Scenario};
pub use spectral_model::{ArmaSpec, NuQuadrature, ToeplitzCovariance};

/// Book chapters double as doc-tests so the guide cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/noise-model.md")]
    mod noise_model {}
    #[doc = include_str!("../../../book/src/equilibrium.md")]
    mod equilibrium {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/fluctuations.md")]
    mod fluctuations {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
