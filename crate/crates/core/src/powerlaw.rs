//! The power law between the sample size n and the α-quantile of MMD_n.
//!
//! Quantiles of MMD_n follow `log n ≈ β1 · log q + β0` with `β1 ≈ -2`. This
//! module fits that line to an empirical quantile curve, predicts the sample
//! size n* at which the quantile drops to ε*, and provides two analytic
//! routes to the same law:
//!
//! - a closed-form quantile for discrete distributions, built from the
//!   spectrum of the centered kernel matrix, a two-moment chi-square match,
//!   the Wilson–Hilferty cube-root normalization and Lin's inverse normal;
//! - a distribution-free upper bound on the quantile that holds for any
//!   distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::SymMatrix;
use crate::mmd::{empirical_quantile, PreparedSample, SamplingMode};
use crate::rng;
use crate::synthetic::{DiscreteDistribution, PreparedDistribution};

/// Quantiles at or below this value are dropped before taking logs.
pub const MIN_QUANTILE: f64 = 1e-12;

/// Points a free-slope fit needs.
pub const FREE_FIT_MIN_POINTS: usize = 3;

/// Slope predicted by theory, used by fixed-slope fits.
pub const FIXED_SLOPE: f64 = -2.0;

/// `(n, q_α(n))` pairs with strictly increasing n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdQuantileCurve {
    pub points: Vec<(usize, f64)>,
    pub alpha: f64,
}

impl MmdQuantileCurve {
    pub fn new(points: Vec<(usize, f64)>, alpha: f64) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::input("quantile curve sizes must be strictly increasing"));
        }
        if points.iter().any(|&(n, q)| n == 0 || !q.is_finite() || q < 0.0) {
            return Err(Error::input("quantile curve needs n >= 1 and finite q >= 0"));
        }
        Ok(MmdQuantileCurve { points, alpha })
    }

    /// Points whose quantile is large enough to take a log of.
    pub fn usable(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.points.iter().copied().filter(|&(_, q)| q > MIN_QUANTILE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Least squares on both intercept and slope.
    Free,
    /// Slope pinned at -2, intercept by least squares.
    Fixed,
}

/// `log n = beta1 · log q + beta0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub beta0: f64,
    pub beta1: f64,
    pub mode: FitMode,
    /// Root-mean-square residual in log n.
    pub residual: f64,
}

pub fn fit_quantile_curve(curve: &MmdQuantileCurve, mode: FitMode) -> Result<PowerLawFit> {
    let pts: Vec<(f64, f64)> = curve
        .usable()
        .map(|(n, q)| (q.ln(), (n as f64).ln()))
        .collect();
    let required = match mode {
        FitMode::Free => FREE_FIT_MIN_POINTS,
        FitMode::Fixed => 1,
    };
    if pts.len() < required {
        return Err(Error::Fit {
            usable: pts.len(),
            required,
        });
    }
    let m = pts.len() as f64;
    let (beta0, beta1) = match mode {
        FitMode::Free => {
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            if sxx <= 1e-300 {
                return Err(Error::numeric("log-quantiles have zero spread, slope is undefined"));
            }
            let b1 = sxy / sxx;
            (my - b1 * mx, b1)
        }
        FitMode::Fixed => {
            let b0 = pts.iter().map(|p| p.1 - FIXED_SLOPE * p.0).sum::<f64>() / m;
            (b0, FIXED_SLOPE)
        }
    };
    let residual = (pts
        .iter()
        .map(|p| (p.1 - beta1 * p.0 - beta0).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(PowerLawFit {
        beta0,
        beta1,
        mode,
        residual,
    })
}

/// Largest prediction accepted as a sample size.
const MAX_PREDICTION: f64 = 1e15;

/// `ceil(exp(beta1 · log ε* + beta0))`, at least 1.
pub fn predict_n_star(fit: &PowerLawFit, eps_star: f64) -> Result<u64> {
    if !(eps_star > 0.0 && eps_star.is_finite()) {
        return Err(Error::input(format!("epsilon* must be positive, got {eps_star}")));
    }
    let v = (fit.beta1 * eps_star.ln() + fit.beta0).exp();
    if !v.is_finite() || v > MAX_PREDICTION {
        return Err(Error::numeric(format!("predicted sample size {v:e} is not usable")));
    }
    // values within rounding of an integer are not bumped to the next one
    let n = (v - 1e-9 * v.max(1.0)).ceil();
    Ok(n.max(1.0) as u64)
}

/// Sizes at which quantiles are estimated from N results: every n in
/// `2..=N/2` up to N = 64, otherwise about 20 log-spaced sizes.
pub fn n_grid(big_n: usize) -> Vec<usize> {
    let top = big_n / 2;
    if top < 2 {
        return Vec::new();
    }
    if big_n <= 64 {
        return (2..=top).collect();
    }
    const POINTS: usize = 20;
    let (lo, hi) = (2f64.ln(), (top as f64).ln());
    let mut grid: Vec<usize> = (0..POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / (POINTS - 1) as f64).exp().round() as usize)
        .collect();
    grid.dedup();
    grid
}

/// Quantile curve of MMD_n over `grid`, resampling a prepared sample.
/// Size n uses the seed derived from `(seed, n)`.
pub fn quantile_curve(
    sample: &PreparedSample,
    grid: &[usize],
    alpha: f64,
    n_rep: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<MmdQuantileCurve> {
    Ok(quantile_curves(sample, grid, &[alpha], n_rep, mode, seed)?.remove(0))
}

/// One curve per level in `alphas`, all read off the same draws, so
/// quantiles at each n are monotone in α.
pub fn quantile_curves(
    sample: &PreparedSample,
    grid: &[usize],
    alphas: &[f64],
    n_rep: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<Vec<MmdQuantileCurve>> {
    let mut points = vec![Vec::with_capacity(grid.len()); alphas.len()];
    for &n in grid {
        let d = sample.mmd_distribution(n, n_rep, mode, rng::derive_seed(seed, n as u64))?;
        for (pts, &alpha) in points.iter_mut().zip(alphas) {
            pts.push((n, d.quantile(alpha)?));
        }
    }
    points
        .into_iter()
        .zip(alphas)
        .map(|(pts, &alpha)| MmdQuantileCurve::new(pts, alpha))
        .collect()
}

/// Quantile curve of MMD_n under i.i.d. draws from a known distribution.
pub fn quantile_curve_from_distribution(
    dist: &PreparedDistribution,
    grid: &[usize],
    alpha: f64,
    n_rep: usize,
    seed: u64,
) -> Result<MmdQuantileCurve> {
    let points = grid
        .iter()
        .map(|&n| {
            let v = dist.mmd_draws(n, n_rep, rng::derive_seed(seed, n as u64))?;
            Ok((n, empirical_quantile(&v, alpha)?))
        })
        .collect::<Result<Vec<_>>>()?;
    MmdQuantileCurve::new(points, alpha)
}

/// An n* estimate and how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NStarEstimate {
    pub n_hat: u64,
    /// `None` when every quantile vanished and no line was fitted.
    pub fit: Option<PowerLawFit>,
    /// Set when the requested fit mode was replaced.
    pub note: Option<String>,
}

/// Fits `curve` and predicts n* at `eps_star`.
///
/// A curve whose quantiles all vanish gives n* = 1. A free-slope request
/// with fewer than three usable points falls back to the fixed slope.
pub fn estimate_n_star(curve: &MmdQuantileCurve, mode: FitMode, eps_star: f64) -> Result<NStarEstimate> {
    let usable = curve.usable().count();
    if usable == 0 {
        return Ok(NStarEstimate {
            n_hat: 1,
            fit: None,
            note: Some("all quantiles vanish; results are indistinguishable".into()),
        });
    }
    let (mode, note) = if mode == FitMode::Free && usable < FREE_FIT_MIN_POINTS {
        (
            FitMode::Fixed,
            Some(format!("{usable} usable point(s); slope fixed at -2")),
        )
    } else {
        (mode, None)
    };
    let fit = fit_quantile_curve(curve, mode)?;
    Ok(NStarEstimate {
        n_hat: predict_n_star(&fit, eps_star)?,
        fit: Some(fit),
        note,
    })
}

/// Eigenvalues of `K̃ · diag(p)` in descending order, where
/// `K̃ = (I - 1pᵀ) K (I - p1ᵀ)` is the kernel matrix centered under `p`.
///
/// They are computed on the similar symmetric matrix
/// `diag(√p) K̃ diag(√p)`.
pub fn centered_kernel_eigenvalues(k: &SymMatrix, p: &[f64]) -> Result<Vec<f64>> {
    let l = k.size();
    if p.len() != l {
        return Err(Error::input(format!(
            "kernel matrix is {l}x{l} but the probability vector has {} entries",
            p.len()
        )));
    }
    check_probabilities(p)?;
    k.check_symmetric(1e-12)?;
    let kp: Vec<f64> = (0..l)
        .map(|i| k.row(i).iter().zip(p).map(|(a, b)| a * b).sum())
        .collect();
    let pkp: f64 = kp.iter().zip(p).map(|(a, b)| a * b).sum();
    let sqrt_p: Vec<f64> = p.iter().map(|x| x.sqrt()).collect();
    let mut s = SymMatrix::zeros(l);
    for i in 0..l {
        for j in 0..l {
            let centered = k.get(i, j) - kp[i] - kp[j] + pkp;
            s.set(i, j, sqrt_p[i] * centered * sqrt_p[j]);
        }
    }
    s.eigenvalues()
}

pub(crate) fn check_probabilities(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::input("empty probability vector"));
    }
    if let Some(i) = p.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::input(format!("probability {i} is {} (must be >= 0)", p[i])));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// `a · χ²(dof)` matched to the first two moments of `Q = 2 Σ λ_k Z_k²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareMatch {
    pub lambdas: Vec<f64>,
    /// Σ λ_k
    pub lambda1: f64,
    /// 3 Σ λ_k² + Σ_{i≠j} λ_i λ_j
    pub lambda2: f64,
    pub a: f64,
    pub dof: f64,
}

pub fn chi2_moment_match(lambdas: &[f64]) -> Result<ChiSquareMatch> {
    let lambda1: f64 = lambdas.iter().sum();
    let sum_sq: f64 = lambdas.iter().map(|l| l * l).sum();
    // Σ_{i≠j} λ_i λ_j = Λ1² - Σ λ²
    let lambda2 = 3.0 * sum_sq + (lambda1 * lambda1 - sum_sq);
    let spread = lambda2 - lambda1 * lambda1;
    if !(lambda1 > 1e-12) || !(spread > 1e-24) {
        return Err(Error::Degenerate(format!(
            "centered spectrum has Λ1 = {lambda1:e}, Λ2 - Λ1² = {spread:e}; the closed form is unavailable"
        )));
    }
    Ok(ChiSquareMatch {
        lambdas: lambdas.to_vec(),
        lambda1,
        lambda2,
        a: spread / lambda1,
        dof: 2.0 * lambda1 * lambda1 / spread,
    })
}

const LIN_C0: f64 = -0.861779;
const LIN_C1: f64 = 0.00120192;
const LIN_C2: f64 = 514089.0;
const LIN_C3: f64 = 1664000.0;

/// Inverse of Lin's normal cdf approximation `1 - ½ exp(-0.717x - 0.416x²)`,
/// valid in the upper tail α ∈ [0.6, 1).
pub fn lin_inverse_normal(alpha: f64) -> Result<f64> {
    if !(0.6..1.0).contains(&alpha) {
        return Err(Error::input(format!(
            "Lin's inverse normal is used for alpha in [0.6, 1), got {alpha}"
        )));
    }
    Ok(LIN_C0 + LIN_C1 * (LIN_C2 - LIN_C3 * (2.0 * (1.0 - alpha)).ln()).sqrt())
}

/// Wilson–Hilferty inverse: the value of `a · χ²(d)` at standard-normal score `z`.
pub fn wilson_hilferty_inverse(z: f64, a: f64, dof: f64) -> f64 {
    let h = 2.0 / (9.0 * dof);
    a * dof * (h.sqrt() * z + (1.0 - h)).powi(3)
}

/// Closed-form α-quantile of MMD_n under a discrete distribution.
///
/// Returns 0 when the centered spectrum is degenerate, i.e. for a point mass.
pub fn closed_form_quantile(dist: &DiscreteDistribution, spec: &KernelSpec, n: usize, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::input("n must be positive"));
    }
    let z = lin_inverse_normal(alpha)?;
    let prepared = dist.prepare(spec)?;
    let lambdas = centered_kernel_eigenvalues(prepared.gram(), dist.probs())?;
    let matched = match chi2_moment_match(&lambdas) {
        Ok(m) => m,
        Err(Error::Degenerate(_)) => return Ok(0.0),
        Err(e) => return Err(e),
    };
    let y = wilson_hilferty_inverse(z, matched.a, matched.dof);
    Ok((y.max(0.0) / n as f64).sqrt())
}

fn check_open_unit(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::input(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Distribution-free upper bound on the α-quantile of MMD_n:
/// `(sqrt(-4 k_sup log(1-α)) + sqrt(2 k_sup)) / sqrt(n)`.
pub fn distribution_free_epsilon(spec: &KernelSpec, alpha: f64, n: usize) -> Result<f64> {
    check_open_unit(alpha)?;
    if n == 0 {
        return Err(Error::input("n must be positive"));
    }
    let k_sup = spec.bounds().k_sup;
    let head = (-4.0 * k_sup * (1.0 - alpha).ln()).sqrt() + (2.0 * k_sup).sqrt();
    Ok(head / (n as f64).sqrt())
}

/// Power law attached to the distribution-free bound, with
/// `beta0 = log(2 k_sup) + log(sqrt(-2 log(1-α)) + 1)` and `beta1 = -2`.
///
/// The line through the bound itself has intercept
/// [`distribution_free_intercept`]; the two differ by
/// `log(sqrt(-2 log(1-α)) + 1)`.
pub fn distribution_free_power_law(spec: &KernelSpec, alpha: f64) -> Result<PowerLawFit> {
    check_open_unit(alpha)?;
    let k_sup = spec.bounds().k_sup;
    Ok(PowerLawFit {
        beta0: (2.0 * k_sup).ln() + ((-2.0 * (1.0 - alpha).ln()).sqrt() + 1.0).ln(),
        beta1: FIXED_SLOPE,
        mode: FitMode::Fixed,
        residual: 0.0,
    })
}

/// Intercept β with `log n = -2 log ε̄_n + β` exactly.
pub fn distribution_free_intercept(spec: &KernelSpec, alpha: f64) -> Result<f64> {
    check_open_unit(alpha)?;
    let k_sup = spec.bounds().k_sup;
    Ok(2.0 * ((-4.0 * k_sup * (1.0 - alpha).ln()).sqrt() + (2.0 * k_sup).sqrt()).ln())
}
