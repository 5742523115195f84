//! Maximum mean discrepancy between equal-size samples of results.
//!
//! The MMD used throughout is the biased V-statistic
//!
//! ```text
//! MMD(x, y)^2 = 1/n^2 Σ k(x_i, x_j) + 1/n^2 Σ k(y_i, y_j) - 2/n^2 Σ k(x_i, y_j)
//! ```
//!
//! Resampling works on index sets into a fixed sample, so the Gram matrix of
//! the distinct results is computed once ([`PreparedSample`]) and every
//! repetition reduces to a quadratic form in count differences.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram_unchecked, KernelSpec, Observation};
use crate::linalg::SymMatrix;
use crate::ranking::{AlternativeSet, Ranking};
use crate::rng;
use crate::synthetic::DiscreteDistribution;

/// Negative radicands above this magnitude are reported, not clamped.
pub const RADICAND_TOL: f64 = 1e-12;

/// Repetitions used when the caller does not say otherwise.
pub const DEFAULT_N_REP: usize = 100;

/// Observed results of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSample {
    results: Vec<Observation>,
    alternatives: AlternativeSet,
    label: String,
}

impl EmpiricalSample {
    pub fn new(results: Vec<Observation>, alternatives: AlternativeSet, label: impl Into<String>) -> Result<Self> {
        let first = results
            .first()
            .ok_or_else(|| Error::input("an empirical sample cannot be empty"))?;
        if first.n_alternatives() != alternatives.len() {
            return Err(Error::input(format!(
                "results cover {} alternatives but {} are named",
                first.n_alternatives(),
                alternatives.len()
            )));
        }
        for x in &results {
            first.check_compatible(x)?;
        }
        Ok(EmpiricalSample {
            results,
            alternatives,
            label: label.into(),
        })
    }

    /// Sample of rankings over alternatives named `a0, a1, ...`.
    pub fn from_rankings(rankings: Vec<Ranking>) -> Result<Self> {
        let n_a = rankings
            .first()
            .ok_or_else(|| Error::input("an empirical sample cannot be empty"))?
            .n_alternatives();
        EmpiricalSample::new(
            rankings.into_iter().map(Observation::Ranking).collect(),
            AlternativeSet::indexed(n_a)?,
            "",
        )
    }

    pub fn results(&self) -> &[Observation] {
        &self.results
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    pub fn alternatives(&self) -> &AlternativeSet {
        &self.alternatives
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n_alternatives(&self) -> usize {
        self.alternatives.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Disjoint halves of a random subset of size 2n.
    WithoutReplacement,
    /// Two independent size-n resamples.
    WithReplacement,
}

/// Resampled distribution of MMD_n.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdSample {
    pub values: Vec<f64>,
    pub n: usize,
    pub n_rep: usize,
    pub spec: KernelSpec,
    pub mode: SamplingMode,
    pub seed: u64,
}

impl MmdSample {
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        empirical_quantile(&self.values, alpha)
    }

    /// Fraction of values at most `eps`.
    pub fn fraction_within(&self, eps: f64) -> f64 {
        fraction_within(&self.values, eps)
    }
}

fn fraction_within(values: &[f64], eps: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v <= eps).count() as f64 / values.len() as f64
}

/// Square root of an MMD^2 value, clamping rounding noise at zero.
pub(crate) fn checked_sqrt(m2: f64) -> Result<f64> {
    if m2 >= 0.0 {
        Ok(m2.sqrt())
    } else if m2 > -RADICAND_TOL {
        Ok(0.0)
    } else {
        Err(Error::numeric(format!("negative MMD^2 radicand {m2:e}")))
    }
}

/// MMD from the count difference `d = c_x - c_y` over a support with Gram
/// matrix `gram`: `sqrt(dᵀ K d) / n`.
pub(crate) fn mmd_from_diff(gram: &SymMatrix, diff: &[f64], n: usize, scratch: &mut Vec<usize>) -> Result<f64> {
    scratch.clear();
    scratch.extend(diff.iter().enumerate().filter(|(_, &d)| d != 0.0).map(|(i, _)| i));
    let mut q = 0.0;
    for &a in scratch.iter() {
        let row = gram.row(a);
        let mut s = 0.0;
        for &b in scratch.iter() {
            s += row[b] * diff[b];
        }
        q += diff[a] * s;
    }
    let nf = n as f64;
    checked_sqrt(q / (nf * nf))
}

/// Distinct results with the Gram matrix over them.
#[derive(Debug, Clone)]
pub(crate) struct Support {
    pub items: Vec<Observation>,
    pub gram: SymMatrix,
}

/// Collapses results onto their distinct values; returns the support and
/// the support index of every input.
pub(crate) fn collapse(spec: &KernelSpec, results: &[Observation]) -> (Support, Vec<usize>) {
    let mut lookup = HashMap::new();
    let mut items = Vec::new();
    let index = results
        .iter()
        .map(|x| {
            *lookup.entry(x.key()).or_insert_with(|| {
                items.push(x.clone());
                items.len() - 1
            })
        })
        .collect();
    let gram = gram_unchecked(spec, &items);
    (Support { items, gram }, index)
}

fn check_sample(spec: &KernelSpec, xs: &[Observation]) -> Result<()> {
    if let Some(first) = xs.first() {
        for x in xs {
            first.check_compatible(x)?;
            spec.check(x)?;
        }
    }
    Ok(())
}

/// Biased MMD between two samples of equal size.
pub fn mmd_biased(spec: &KernelSpec, x: &[Observation], y: &[Observation]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "MMD compares samples of equal size, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::input("MMD of empty samples"));
    }
    check_sample(spec, x)?;
    check_sample(spec, y)?;
    x[0].check_compatible(&y[0])?;
    let both: Vec<Observation> = x.iter().chain(y).cloned().collect();
    let (support, index) = collapse(spec, &both);
    let mut diff = vec![0.0; support.items.len()];
    for &i in &index[..x.len()] {
        diff[i] += 1.0;
    }
    for &i in &index[x.len()..] {
        diff[i] -= 1.0;
    }
    mmd_from_diff(&support.gram, &diff, x.len(), &mut Vec::new())
}

/// An empirical sample with its Gram matrix cached for resampling.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    spec: KernelSpec,
    support: Support,
    index: Vec<usize>,
}

impl PreparedSample {
    pub fn new(sample: &EmpiricalSample, spec: &KernelSpec) -> Result<Self> {
        check_sample(spec, sample.results())?;
        let (support, index) = collapse(spec, sample.results());
        Ok(PreparedSample {
            spec: *spec,
            support,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Number of distinct results.
    pub fn support_size(&self) -> usize {
        self.support.items.len()
    }

    /// `n_rep` draws of MMD_n; repetition `i` uses stream `i` of `seed`.
    pub fn mmd_distribution(&self, n: usize, n_rep: usize, mode: SamplingMode, seed: u64) -> Result<MmdSample> {
        let big_n = self.len();
        if n == 0 || n_rep == 0 {
            return Err(Error::input("n and n_rep must be positive"));
        }
        if mode == SamplingMode::WithoutReplacement && 2 * n > big_n {
            return Err(Error::Size(format!(
                "two disjoint subsamples of size {n} need 2n <= N = {big_n}"
            )));
        }
        let l = self.support_size();
        let values = (0..n_rep)
            .into_par_iter()
            .map_init(
                || (vec![0.0; l], Vec::new(), Vec::new()),
                |(diff, scratch, perm), i| {
                    let mut rng = rng::stream(seed, i as u64);
                    diff.iter_mut().for_each(|d| *d = 0.0);
                    match mode {
                        SamplingMode::WithoutReplacement => {
                            perm.clear();
                            perm.extend(0..big_n);
                            for j in 0..2 * n {
                                let k = rng.random_range(j..big_n);
                                perm.swap(j, k);
                            }
                            for &j in &perm[..n] {
                                diff[self.index[j]] += 1.0;
                            }
                            for &j in &perm[n..2 * n] {
                                diff[self.index[j]] -= 1.0;
                            }
                        }
                        SamplingMode::WithReplacement => {
                            for _ in 0..n {
                                diff[self.index[rng.random_range(0..big_n)]] += 1.0;
                            }
                            for _ in 0..n {
                                diff[self.index[rng.random_range(0..big_n)]] -= 1.0;
                            }
                        }
                    }
                    mmd_from_diff(&self.support.gram, diff, n, scratch)
                },
            )
            .collect::<Result<Vec<f64>>>()?;
        Ok(MmdSample {
            values,
            n,
            n_rep,
            spec: self.spec,
            mode,
            seed,
        })
    }
}

/// Resampled distribution of MMD_n from an empirical sample.
pub fn mmd_distribution(
    sample: &EmpiricalSample,
    spec: &KernelSpec,
    n: usize,
    n_rep: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<MmdSample> {
    PreparedSample::new(sample, spec)?.mmd_distribution(n, n_rep, mode, seed)
}

/// Order statistic at 1-based index `ceil(alpha * m)`.
pub fn empirical_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::input(format!("quantile level must lie in (0, 1), got {alpha}")));
    }
    if values.is_empty() {
        return Err(Error::input("quantile of an empty sequence"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    // the small offset keeps 0.95 * 100 from rounding up to 96
    let rank = ((alpha * m as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(m) - 1])
}

/// n-generalizability: probability that two size-n samples lie within `eps`.
pub fn generalizability(
    sample: &EmpiricalSample,
    spec: &KernelSpec,
    n: usize,
    eps: f64,
    n_rep: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<f64> {
    Ok(mmd_distribution(sample, spec, n, n_rep, mode, seed)?.fraction_within(eps))
}

/// Outcome of the exact sample-size scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NStar {
    Found(usize),
    /// No n up to the cap reached the requested generalizability.
    ExceedsMax(usize),
}

impl NStar {
    pub fn value(&self) -> Option<usize> {
        match self {
            NStar::Found(n) => Some(*n),
            NStar::ExceedsMax(_) => None,
        }
    }
}

/// Smallest n whose Monte-Carlo generalizability under the true distribution
/// reaches `alpha_star`, scanning n = 1, 2, ..., n_max.
pub fn n_star_exact(
    dist: &DiscreteDistribution,
    spec: &KernelSpec,
    alpha_star: f64,
    eps_star: f64,
    n_max: usize,
    n_rep: usize,
    seed: u64,
) -> Result<NStar> {
    let prepared = dist.prepare(spec)?;
    for n in 1..=n_max {
        let values = prepared.mmd_draws(n, n_rep, rng::derive_seed(seed, n as u64))?;
        if fraction_within(&values, eps_star) >= alpha_star {
            return Ok(NStar::Found(n));
        }
    }
    Ok(NStar::ExceedsMax(n_max))
}
