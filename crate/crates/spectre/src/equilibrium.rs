//! Deterministic limits of the noise spectrum: Stieltjes transforms, the
//! bulk edge, isolated-eigenvalue locations and the detectability threshold.
//!
//! For a spectral measure `nu` of the noise covariance and a dimension ratio
//! `c = N/T`, the limiting eigenvalue distribution `mu` of the noise Gram
//! matrix is characterized by its Stieltjes transform `m(z)`, the unique
//! solution of
//!
//! ```text
//! m = ( -z + ∫ t / (1 + c m t) dnu(t) )^{-1}
//! ```
//!
//! On the real axis to the right of the bulk, `m` is recovered by inverting
//! the explicit function `x(m) = -1/m + ∫ t/(1 + c m t) dnu(t)`, which is
//! monotone on the relevant interval, so every solver here is a bracketed
//! bisection with guaranteed convergence. The right edge `b` of the bulk is
//! `x(m_b)` where `m_b` solves `∫ (mt/(1+cmt))² dnu = 1/c`.
//!
//! A source of power `p` detaches an eigenvalue from the bulk iff
//! `p > p_lim = 1/g(b⁺)` where `g(x) = x m(x) m̃(x)`; the eigenvalue then
//! converges to the unique `ρ > b` with `p g(ρ) = 1`.

use crate::spectral_model::{ArmaSpec, NoiseModelError, NuQuadrature};
use num_complex::Complex64;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum EquilibriumError {
    #[error("m = {m} outside the domain ({lo}, 0)")]
    MOutOfDomain { m: f64, lo: f64 },
    #[error("x = {x} is not beyond the support edge b = {b}")]
    XBelowEdge { x: f64, b: f64 },
    #[error("source power {p} is below the detectability threshold {p_lim}")]
    Subcritical { p: f64, p_lim: f64 },
    #[error("bracketing failed: {0}")]
    Bracket(String),
    #[error("fixed-point iteration did not reach {tol:.1e} after {iters} iterations (residual {residual:.3e}); reduce the damping factor")]
    NoConvergence {
        tol: f64,
        iters: usize,
        residual: f64,
    },
    #[error(transparent)]
    Noise(#[from] NoiseModelError),
}

/// Root-finding controls shared by all equilibrium solvers.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Absolute tolerance on the transform variable `m`.
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Geometric growth factor when expanding a search bracket.
    pub bracket_expansion: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            abs_tol: 1e-12,
            max_iter: 200,
            bracket_expansion: 2.0,
        }
    }
}

/// The pair `(b, m_b)`: right edge of the bulk and the value of `m` there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSolution {
    pub b: f64,
    pub m_b: f64,
}

/// All transform values at one point `x > b`, from a single inversion.
#[derive(Debug, Clone, Copy)]
pub struct PointEval {
    pub x: f64,
    pub m: f64,
    pub m_tilde: f64,
    pub g: f64,
    pub g_prime: f64,
    pub m_prime: f64,
    pub delta: f64,
}

/// Immutable bundle of `(nu, c)` with lazily computed edge data. All queries
/// are pure; the edge is initialized once even under concurrent first access.
#[derive(Debug)]
pub struct EquilibriumContext {
    nu: NuQuadrature,
    c: f64,
    cfg: SolverConfig,
    edge: OnceLock<Result<EdgeSolution, EquilibriumError>>,
}

impl EquilibriumContext {
    pub fn new(nu: NuQuadrature, c: f64) -> Result<Self, EquilibriumError> {
        Self::with_config(nu, c, SolverConfig::default())
    }

    pub fn with_config(
        nu: NuQuadrature,
        c: f64,
        cfg: SolverConfig,
    ) -> Result<Self, EquilibriumError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(EquilibriumError::Bracket(format!(
                "dimension ratio c must be positive, got {c}"
            )));
        }
        let (_, b_nu) = nu.support();
        let supported = b_nu.is_finite() && b_nu > 0.0;
        if !supported {
            return Err(EquilibriumError::Bracket(
                "spectral measure must not be concentrated at zero".into(),
            ));
        }
        Ok(EquilibriumContext {
            nu,
            c,
            cfg,
            edge: OnceLock::new(),
        })
    }

    /// Context for the asymptotic measure of an ARMA noise spec.
    pub fn from_noise(spec: &ArmaSpec, c: f64) -> Result<Self, EquilibriumError> {
        Self::new(spec.build_nu(), c)
    }

    /// White-noise context (`nu = delta_1`).
    pub fn white(c: f64) -> Result<Self, EquilibriumError> {
        Self::new(NuQuadrature::atom(1.0), c)
    }

    /// Finite-horizon context: the empirical atom measure of the eigenvalues
    /// of an actual `R_T` together with `c_T = N/T`. Solving the same
    /// equations then yields the finite-horizon quantities (e.g. the spike
    /// centering values).
    pub fn finite_horizon(r_eigenvalues: &[f64], c_t: f64) -> Result<Self, EquilibriumError> {
        Self::new(NuQuadrature::from_atoms(r_eigenvalues)?, c_t)
    }

    pub fn nu(&self) -> &NuQuadrature {
        &self.nu
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Lower endpoint of the domain of `x(m)`: `-1/(c b_nu)`.
    fn m_domain_lo(&self) -> f64 {
        let (_, b_nu) = self.nu.support();
        -1.0 / (self.c * b_nu)
    }

    /// `x(m) = -1/m + ∫ t/(1+cmt) dnu`, defined for `m` in `(-1/(c b_nu), 0)`.
    pub fn x_of_m(&self, m: f64) -> Result<f64, EquilibriumError> {
        let lo = self.m_domain_lo();
        if !(m > lo && m < 0.0) {
            return Err(EquilibriumError::MOutOfDomain { m, lo });
        }
        Ok(self.x_of_m_unchecked(m))
    }

    fn x_of_m_unchecked(&self, m: f64) -> f64 {
        let c = self.c;
        -1.0 / m + self.nu.integrate(|t| t / (1.0 + c * m * t))
    }

    /// `∫ (mt/(1+cmt))² dnu - 1/c`; decreasing in `m`, negative near zero and
    /// diverging at the lower domain endpoint.
    fn edge_equation(&self, m: f64) -> f64 {
        let c = self.c;
        self.nu.integrate(|t| {
            let r = m * t / (1.0 + c * m * t);
            r * r
        }) - 1.0 / c
    }

    /// Solves for `(b, m_b)`. Cached after the first call.
    pub fn edge(&self) -> Result<EdgeSolution, EquilibriumError> {
        self.edge
            .get_or_init(|| self.solve_edge())
            .clone()
    }

    fn solve_edge(&self) -> Result<EdgeSolution, EquilibriumError> {
        let lo_limit = self.m_domain_lo();
        // Parameterize m = lo_limit * s with s in (0,1); the edge equation is
        // increasing in s, from -1/c to +infinity.
        let mut s_lo = 1e-9;
        if self.edge_equation(lo_limit * s_lo) > 0.0 {
            for _ in 0..60 {
                s_lo *= 0.5;
                if self.edge_equation(lo_limit * s_lo) <= 0.0 {
                    break;
                }
            }
        }
        let mut s_hi = 0.5;
        let mut ok = self.edge_equation(lo_limit * s_hi) > 0.0;
        for _ in 0..70 {
            if ok {
                break;
            }
            s_hi = 1.0 - 0.5 * (1.0 - s_hi);
            ok = self.edge_equation(lo_limit * s_hi) > 0.0;
        }
        if !ok {
            return Err(EquilibriumError::Bracket(
                "edge equation has no sign change; measure may be degenerate".into(),
            ));
        }
        let (mut lo, mut hi) = (lo_limit * s_hi, lo_limit * s_lo);
        for _ in 0..self.cfg.max_iter {
            if hi - lo < self.cfg.abs_tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.edge_equation(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let m_b = 0.5 * (lo + hi);
        let b = self.x_of_m_unchecked(m_b);
        Ok(EdgeSolution { b, m_b })
    }

    /// Inverse of `x(m)`: the Stieltjes transform on the real axis, defined
    /// for `x > b`. Negative and increasing in `x`.
    pub fn m_of_x(&self, x: f64) -> Result<f64, EquilibriumError> {
        let EdgeSolution { b, m_b } = self.edge()?;
        let beyond = x.is_finite() && x > b + 1e-12;
        if !beyond {
            return Err(EquilibriumError::XBelowEdge { x, b });
        }
        // x(m) increases from b to +infinity on (m_b, 0); find hi with
        // x(hi) >= x by halving toward zero.
        let mut hi = 0.5 * m_b;
        let mut guard = 0;
        while self.x_of_m_unchecked(hi) < x {
            hi *= 0.5;
            guard += 1;
            if guard > 1100 {
                return Err(EquilibriumError::Bracket(format!(
                    "could not bracket m(x) for x = {x}"
                )));
            }
        }
        let mut lo = if guard == 0 { m_b } else { 2.0 * hi };
        for _ in 0..self.cfg.max_iter {
            if hi - lo < self.cfg.abs_tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.x_of_m_unchecked(mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `m̃(x) = c m(x) - (1-c)/x`, the co-resolvent transform.
    pub fn m_tilde_of_x(&self, x: f64) -> Result<f64, EquilibriumError> {
        let m = self.m_of_x(x)?;
        Ok(self.c * m - (1.0 - self.c) / x)
    }

    /// `g(x) = x m(x) m̃(x)`, positive and decreasing on `(b, ∞)`.
    pub fn g_of_x(&self, x: f64) -> Result<f64, EquilibriumError> {
        Ok(self.eval(x)?.g)
    }

    /// Analytic `g'(x)` through `m'(x) = m²/Δ` (never finite differences:
    /// `Δ → 0` at the edge makes those ill-conditioned exactly where the
    /// derivative is needed).
    pub fn g_prime(&self, x: f64) -> Result<f64, EquilibriumError> {
        Ok(self.eval(x)?.g_prime)
    }

    /// `Δ(x) = 1 - c ∫ (mt/(1+cmt))² dnu`, positive on `(b, ∞)`, vanishing
    /// at the edge and tending to one at infinity.
    pub fn delta(&self, x: f64) -> Result<f64, EquilibriumError> {
        Ok(self.eval(x)?.delta)
    }

    /// One inversion, all derived quantities.
    pub fn eval(&self, x: f64) -> Result<PointEval, EquilibriumError> {
        let m = self.m_of_x(x)?;
        Ok(self.eval_at(x, m))
    }

    fn eval_at(&self, x: f64, m: f64) -> PointEval {
        let c = self.c;
        let delta = 1.0
            - c * self.nu.integrate(|t| {
                let r = m * t / (1.0 + c * m * t);
                r * r
            });
        let m_prime = m * m / delta;
        let m_tilde = c * m - (1.0 - c) / x;
        // g = x c m^2 - (1-c) m, so g' = c m^2 + m' (2 x c m - (1-c)).
        let g = x * m * m_tilde;
        let g_prime = c * m * m + m_prime * (2.0 * x * c * m - (1.0 - c));
        PointEval {
            x,
            m,
            m_tilde,
            g,
            g_prime,
            m_prime,
            delta,
        }
    }

    /// `g(b⁺) = ∫ -m_b/(1+c m_b t) dnu`, the supremum of `g`.
    pub fn g_at_edge(&self) -> Result<f64, EquilibriumError> {
        let EdgeSolution { m_b, .. } = self.edge()?;
        let c = self.c;
        Ok(self.nu.integrate(|t| -m_b / (1.0 + c * m_b * t)))
    }

    /// Minimal source power that detaches an eigenvalue: `1/g(b⁺)`.
    pub fn detectability_threshold(&self) -> Result<f64, EquilibriumError> {
        Ok(1.0 / self.g_at_edge()?)
    }

    /// Location `ρ > b` of the isolated eigenvalue for a source of power `p`:
    /// the unique solution of `p g(ρ) = 1`. Subcritical powers are rejected.
    pub fn spike_location(&self, p: f64) -> Result<f64, EquilibriumError> {
        let p_lim = self.detectability_threshold()?;
        let supercritical = p.is_finite() && p > p_lim;
        if !supercritical {
            return Err(EquilibriumError::Subcritical { p, p_lim });
        }
        let EdgeSolution { b, .. } = self.edge()?;
        let lo0 = b + 1e-12 * b.max(1.0);
        let mut hi = b + b.max(1.0);
        let mut guard = 0;
        while p * self.eval(hi)?.g > 1.0 {
            hi *= self.cfg.bracket_expansion;
            guard += 1;
            if guard > 200 {
                return Err(EquilibriumError::Bracket(format!(
                    "could not bracket the spike for p = {p}"
                )));
            }
        }
        let mut lo = lo0;
        for _ in 0..self.cfg.max_iter {
            let width = hi - lo;
            if width < 1e-10 || width < 8.0 * f64::EPSILON * hi.abs() {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if p * self.eval(mid)?.g > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Density of the limiting Gram spectral measure on a grid of positive
    /// points, via `f(x) = Im m(x + iη)/π` with `η = 1e-6`. The complex
    /// fixed point is solved by damped iteration with a positivity
    /// projection; stiffness near the real axis is handled by continuation,
    /// starting from a comfortably large imaginary offset and walking it
    /// down to `η` with warm restarts.
    pub fn limiting_density(&self, grid: &[f64]) -> Result<Vec<f64>, EquilibriumError> {
        let eta = 1e-6;
        let mut out = Vec::with_capacity(grid.len());
        let mut warm: Option<Complex64> = None;
        for &x in grid {
            let positive = x.is_finite() && x > 0.0;
            if !positive {
                return Err(EquilibriumError::Bracket(format!(
                    "density grid points must be positive, got {x}"
                )));
            }
            let mut offset = 0.1f64;
            let mut m = warm;
            loop {
                m = Some(self.solve_complex(Complex64::new(x, offset), m)?);
                if offset <= eta {
                    break;
                }
                offset = (offset / 8.0).max(eta);
            }
            let m = m.unwrap();
            warm = Some(m);
            out.push(m.im / std::f64::consts::PI);
        }
        Ok(out)
    }

    fn fp_next(&self, z: Complex64, m: Complex64) -> Complex64 {
        let c = self.c;
        let integral = self
            .nu
            .integrate_c(|t| Complex64::new(t, 0.0) / (1.0 + c * m * t));
        (integral - z).inv()
    }

    /// Newton steps on `-z + ∫ t/(1+cmt) dnu - 1/m = 0`, used to finish the
    /// damped iteration: close to the real axis the fixed-point map turns
    /// nearly neutral and would need millions of sweeps for the last digits.
    fn newton_polish(&self, z: Complex64, start: Complex64, tol: f64) -> Option<Complex64> {
        let c = self.c;
        let mut m = start;
        for _ in 0..30 {
            let integral = self
                .nu
                .integrate_c(|t| Complex64::new(t, 0.0) / (1.0 + c * m * t));
            let deriv = self.nu.integrate_c(|t| {
                let d = 1.0 + c * m * t;
                Complex64::new(-c * t * t, 0.0) / (d * d)
            });
            let f = integral - z - m.inv();
            let fp = deriv + (m * m).inv();
            let step = f / fp;
            if !step.is_finite() {
                return None;
            }
            m -= step;
            if step.norm() < 1e-15 {
                break;
            }
        }
        (m.im > 0.0 && (self.fp_next(z, m) - m).norm() < tol).then_some(m)
    }

    fn solve_complex(
        &self,
        z: Complex64,
        warm: Option<Complex64>,
    ) -> Result<Complex64, EquilibriumError> {
        let tol = self.cfg.abs_tol;
        let budget = self.cfg.max_iter * 10;
        let mut last = (f64::INFINITY, 0usize);
        for &omega0 in &[1.0, 0.5, 0.25, 0.125] {
            let mut m = warm.unwrap_or(Complex64::new(0.0, 1.0));
            if m.im <= 0.0 {
                m = Complex64::new(0.0, 1.0);
            }
            let mut omega = omega0;
            let mut prev_res = f64::INFINITY;
            for it in 0..budget {
                let next = self.fp_next(z, m);
                let res = (next - m).norm();
                if res < tol {
                    return Ok(m);
                }
                // The polish certifies its own result, so try it early and
                // keep iterating whenever it lands outside the right basin.
                if res < 1e-2 || it % 64 == 63 {
                    if let Some(polished) = self.newton_polish(z, m, tol) {
                        return Ok(polished);
                    }
                }
                m += omega * (next - m);
                if m.im <= 0.0 {
                    m.im = 1e-12;
                }
                if res > prev_res {
                    omega = (omega * 0.5).max(0.02);
                } else {
                    omega = (omega * 1.05).min(omega0);
                }
                prev_res = res;
                last = (res, it + 1);
            }
        }
        Err(EquilibriumError::NoConvergence {
            tol,
            iters: last.1,
            residual: last.0,
        })
    }
}
