//! Explicit distributions over results, enumeration of ranking spaces and
//! the estimator-accuracy experiment.

use std::collections::HashSet;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram_unchecked, KernelSpec, Observation};
use crate::linalg::SymMatrix;
use crate::mmd::{n_star_exact, EmpiricalSample, NStar, PreparedSample, SamplingMode, DEFAULT_N_REP};
use crate::powerlaw::{self, estimate_n_star, FitMode};
use crate::ranking::{AlternativeSet, Ranking};
use crate::rng;

/// Largest n_a enumerated with ties (4683 rankings at 6).
pub const MAX_TIES_ALTERNATIVES: usize = 6;
/// Largest n_a enumerated without ties (5040 permutations at 7).
pub const MAX_PERM_ALTERNATIVES: usize = 7;

/// Finite distribution over rankings or score vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    support: Vec<Observation>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<Observation>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::input(format!(
                "{} support points but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        powerlaw::check_probabilities(&probs)?;
        let mut seen = HashSet::new();
        for x in &support {
            support[0].check_compatible(x)?;
            if !seen.insert(x.key()) {
                return Err(Error::input(format!("{x} appears twice in the support")));
            }
        }
        Ok(DiscreteDistribution { support, probs })
    }

    pub fn support(&self) -> &[Observation] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn n_alternatives(&self) -> usize {
        self.support[0].n_alternatives()
    }

    /// Caches the Gram matrix over the support for repeated MMD draws.
    pub fn prepare(&self, spec: &KernelSpec) -> Result<PreparedDistribution> {
        for x in &self.support {
            spec.check(x)?;
        }
        let sampler = WeightedIndex::new(&self.probs)
            .map_err(|e| Error::input(format!("invalid probabilities: {e}")))?;
        Ok(PreparedDistribution {
            spec: *spec,
            gram: gram_unchecked(spec, &self.support),
            sampler,
        })
    }
}

/// A distribution with its Gram matrix cached.
#[derive(Debug, Clone)]
pub struct PreparedDistribution {
    spec: KernelSpec,
    gram: SymMatrix,
    sampler: WeightedIndex<f64>,
}

impl PreparedDistribution {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Gram matrix over the support, in support order.
    pub fn gram(&self) -> &SymMatrix {
        &self.gram
    }

    /// `n_rep` draws of MMD_n between two independent size-n samples from
    /// the distribution; draw `i` uses stream `i` of `seed`.
    pub fn mmd_draws(&self, n: usize, n_rep: usize, seed: u64) -> Result<Vec<f64>> {
        if n == 0 || n_rep == 0 {
            return Err(Error::input("n and n_rep must be positive"));
        }
        let l = self.gram.size();
        (0..n_rep)
            .into_par_iter()
            .map_init(
                || (vec![0.0; l], Vec::new()),
                |(diff, scratch), i| {
                    let mut rng = rng::stream(seed, i as u64);
                    diff.iter_mut().for_each(|d| *d = 0.0);
                    for _ in 0..n {
                        diff[self.sampler.sample(&mut rng)] += 1.0;
                    }
                    for _ in 0..n {
                        diff[self.sampler.sample(&mut rng)] -= 1.0;
                    }
                    crate::mmd::mmd_from_diff(&self.gram, diff, n, scratch)
                },
            )
            .collect()
    }
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// All rankings of `n_a` alternatives, in lexicographic order of rank vectors.
///
/// With ties these are the ordered set partitions (ordered Bell numbers
/// 1, 3, 13, 75, 541, ...); without, the `n_a!` permutations.
pub fn enumerate_rankings(n_a: usize, with_ties: bool) -> Result<Vec<Ranking>> {
    let cap = if with_ties { MAX_TIES_ALTERNATIVES } else { MAX_PERM_ALTERNATIVES };
    if n_a == 0 {
        return Err(Error::input("need at least one alternative"));
    }
    if n_a > cap {
        return Err(Error::Size(format!(
            "enumerating {} of {n_a} alternatives is capped at n_a = {cap}",
            if with_ties { "rankings with ties" } else { "permutations" }
        )));
    }
    let mut out = Vec::new();
    let mut ranks = vec![0; n_a];
    if with_ties {
        partitions(&mut ranks, 0, (1 << n_a) - 1, &mut out);
        out.sort();
    } else {
        out.reserve(factorial(n_a));
        let mut perm: Vec<usize> = (0..n_a).collect();
        loop {
            out.push(perm.clone());
            if !next_permutation(&mut perm) {
                break;
            }
        }
    }
    out.into_iter().map(Ranking::new).collect()
}

/// Assigns tier `tier` to every non-empty subset of `left` in turn.
fn partitions(ranks: &mut Vec<usize>, tier: usize, left: u32, out: &mut Vec<Vec<usize>>) {
    if left == 0 {
        out.push(ranks.clone());
        return;
    }
    let mut sub = left;
    while sub != 0 {
        for (a, r) in ranks.iter_mut().enumerate() {
            if sub & (1 << a) != 0 {
                *r = tier;
            }
        }
        partitions(ranks, tier + 1, left & !sub, out);
        sub = (sub - 1) & left;
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = v.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = v.iter().rposition(|&x| x > v[i]).unwrap_or(i);
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Equal mass on every ranking of `n_a` alternatives.
pub fn uniform_distribution(n_a: usize, with_ties: bool) -> Result<DiscreteDistribution> {
    let rankings = enumerate_rankings(n_a, with_ties)?;
    let p = 1.0 / rankings.len() as f64;
    let probs = vec![p; rankings.len()];
    DiscreteDistribution::new(rankings.into_iter().map(Observation::Ranking).collect(), probs)
}

pub fn explicit_distribution(pairs: Vec<(Observation, f64)>) -> Result<DiscreteDistribution> {
    let (support, probs) = pairs.into_iter().unzip();
    DiscreteDistribution::new(support, probs)
}

/// `n` i.i.d. draws from `dist`.
pub fn sample_from(dist: &DiscreteDistribution, n: usize, seed: u64) -> Result<EmpiricalSample> {
    if n == 0 {
        return Err(Error::input("sample size must be positive"));
    }
    let sampler = WeightedIndex::new(&dist.probs).map_err(|e| Error::input(e.to_string()))?;
    let mut rng = rng::stream(seed, 0);
    let results = (0..n)
        .map(|_| dist.support[sampler.sample(&mut rng)].clone())
        .collect();
    EmpiricalSample::new(results, AlternativeSet::indexed(dist.n_alternatives())?, "synthetic")
}

/// Settings of the estimator-accuracy experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyConfig {
    pub alpha_star: f64,
    pub delta_star: f64,
    pub n_values: Vec<usize>,
    pub reps: usize,
    /// Bootstrap repetitions per quantile.
    pub n_rep: usize,
    pub fit_mode: FitMode,
    /// How the preliminary sample is resampled.
    pub mode: SamplingMode,
    /// Smallest n on the quantile grid; the rest is [`powerlaw::n_grid`].
    pub min_n: usize,
    /// Draws per n for the ground-truth n*.
    pub exact_draws: usize,
    pub exact_n_max: usize,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        AccuracyConfig {
            alpha_star: 0.95,
            delta_star: 0.05,
            n_values: vec![10, 20, 40, 80],
            reps: 100,
            n_rep: DEFAULT_N_REP,
            fit_mode: FitMode::Free,
            mode: SamplingMode::WithReplacement,
            min_n: 1,
            exact_draws: 2000,
            exact_n_max: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub n_prelim: usize,
    pub rep: usize,
    pub n_hat: Option<u64>,
    pub ratio: Option<f64>,
    /// Why `n_hat` is missing.
    pub failure: Option<String>,
}

/// Ratios n̂*_N / n* for every preliminary size N and repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub kernel: String,
    pub alpha_star: f64,
    pub delta_star: f64,
    pub eps_star: f64,
    pub n_star: usize,
    pub seed: u64,
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    /// Ratios for one N, skipping missing entries.
    pub fn ratios(&self, n_prelim: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.n_prelim == n_prelim)
            .filter_map(|r| r.ratio)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["kernel", "n_prelim", "rep", "n_hat", "n_star", "ratio", "failure"])
            ?;
        for r in &self.rows {
            out.write_record([
                self.kernel.clone(),
                r.n_prelim.to_string(),
                r.rep.to_string(),
                r.n_hat.map(|v| v.to_string()).unwrap_or_default(),
                self.n_star.to_string(),
                r.ratio.map(|v| v.to_string()).unwrap_or_default(),
                r.failure.clone().unwrap_or_default(),
            ])
            ?;
        }
        out.flush()
    }
}

/// `n_grid(big_n)` with sizes below `min_n` dropped and n = 1 prepended when `min_n` is 1.
fn accuracy_grid(big_n: usize, min_n: usize) -> Vec<usize> {
    let rest = powerlaw::n_grid(big_n).into_iter().filter(|&n| n >= min_n);
    (min_n <= 1).then_some(1).into_iter().chain(rest).collect()
}

/// For each N and repetition: draws N results from `dist`, bootstraps the
/// quantile curve of MMD_n over the n-grid, fits the power law and divides
/// the predicted n̂*_N by the ground-truth n* of the distribution.
pub fn estimator_accuracy_experiment(
    dist: &DiscreteDistribution,
    spec: &KernelSpec,
    config: &AccuracyConfig,
    seed: u64,
) -> Result<AccuracyTable> {
    if config.reps == 0 || config.n_values.is_empty() {
        return Err(Error::input("need at least one repetition and one preliminary size"));
    }
    if let Some(&n) = config.n_values.iter().find(|&&n| n < 4) {
        return Err(Error::input(format!("preliminary size {n} is below 4")));
    }
    let eps_star = spec.epsilon_star(config.delta_star)?;
    let n_star = match n_star_exact(
        dist,
        spec,
        config.alpha_star,
        eps_star,
        config.exact_n_max,
        config.exact_draws,
        rng::derive_seed(seed, u64::MAX),
    )? {
        NStar::Found(n) => n,
        NStar::ExceedsMax(cap) => {
            return Err(Error::Size(format!("ground-truth n* exceeds the scan cap {cap}")));
        }
    };
    log::info!("{spec}: ground-truth n* = {n_star} at eps* = {eps_star:.4}");

    let jobs: Vec<(usize, usize)> = config
        .n_values
        .iter()
        .flat_map(|&n| (0..config.reps).map(move |r| (n, r)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(big_n, rep)| {
            let rep_seed = rng::derive_seed(rng::derive_seed(seed, big_n as u64), rep as u64);
            let estimate = (|| {
                let sample = sample_from(dist, big_n, rep_seed)?;
                let prepared = PreparedSample::new(&sample, spec)?;
                let curve = powerlaw::quantile_curve(
                    &prepared,
                    &accuracy_grid(big_n, config.min_n),
                    config.alpha_star,
                    config.n_rep,
                    config.mode,
                    rng::derive_seed(rep_seed, 1),
                )?;
                estimate_n_star(&curve, config.fit_mode, eps_star)
            })();
            match estimate {
                Ok(e) => Ok(AccuracyRow {
                    n_prelim: big_n,
                    rep,
                    n_hat: Some(e.n_hat),
                    ratio: Some(e.n_hat as f64 / n_star as f64),
                    failure: None,
                }),
                Err(e @ (Error::Fit { .. } | Error::Numeric(_) | Error::Degenerate(_))) => Ok(AccuracyRow {
                    n_prelim: big_n,
                    rep,
                    n_hat: None,
                    ratio: None,
                    failure: Some(e.to_string()),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyTable {
        kernel: spec.to_string(),
        alpha_star: config.alpha_star,
        delta_star: config.delta_star,
        eps_star,
        n_star,
        seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(v: &[usize]) -> Observation {
        Observation::Ranking(Ranking::new(v.to_vec()).unwrap())
    }

    #[test]
    fn permutation_order_is_lexicographic() {
        let p: Vec<Vec<usize>> = enumerate_rankings(3, false)
            .unwrap()
            .into_iter()
            .map(Vec::from)
            .collect();
        assert_eq!(
            p,
            vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0]
            ]
        );
        assert_eq!(enumerate_rankings(1, true).unwrap().len(), 1);
        assert_eq!(enumerate_rankings(4, false).unwrap().len(), 24);
    }

    #[test]
    fn size_guards() {
        assert!(matches!(enumerate_rankings(7, true), Err(Error::Size(_))));
        assert!(matches!(enumerate_rankings(8, false), Err(Error::Size(_))));
        assert!(enumerate_rankings(0, false).is_err());
        assert_eq!(enumerate_rankings(6, true).unwrap().len(), 4683);
    }

    #[test]
    fn uniform_masses() {
        let u = uniform_distribution(3, false).unwrap();
        assert_eq!(u.len(), 6);
        assert!(u.probs().iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
        let u = uniform_distribution(3, true).unwrap();
        assert_eq!(u.len(), 13);
        assert!((u.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn explicit_validation() {
        let p = explicit_distribution(vec![(r(&[0, 1, 2, 3, 4]), 0.55), (r(&[1, 0, 2, 3, 4]), 0.45)]).unwrap();
        assert_eq!(p.len(), 2);
        assert!(explicit_distribution(vec![(r(&[0, 1]), 0.5), (r(&[0, 1]), 0.5)]).is_err());
        assert!(explicit_distribution(vec![(r(&[0, 1]), 0.5), (r(&[1, 0]), 0.6)]).is_err());
        assert!(explicit_distribution(vec![(r(&[0, 1]), 1.5), (r(&[1, 0]), -0.5)]).is_err());
        assert!(explicit_distribution(vec![(r(&[0, 1]), 0.5), (r(&[1, 0, 2]), 0.5)]).is_err());
        assert!(explicit_distribution(vec![]).is_err());
    }

    #[test]
    fn sampling_point_mass_and_determinism() {
        let point = explicit_distribution(vec![(r(&[0, 0, 1]), 1.0)]).unwrap();
        let s = sample_from(&point, 7, 3).unwrap();
        assert!(s.results().iter().all(|x| *x == r(&[0, 0, 1])));
        let u = uniform_distribution(3, true).unwrap();
        assert_eq!(sample_from(&u, 50, 9).unwrap(), sample_from(&u, 50, 9).unwrap());
        assert_ne!(sample_from(&u, 50, 9).unwrap(), sample_from(&u, 50, 10).unwrap());
    }

    #[test]
    fn draws_match_explicit_counts() {
        let u = uniform_distribution(3, false).unwrap();
        let spec = KernelSpec::mallows(3, 1.0 / 3.0).unwrap();
        let prep = u.prepare(&spec).unwrap();
        let a = prep.mmd_draws(5, 64, 11).unwrap();
        assert_eq!(a, prep.mmd_draws(5, 64, 11).unwrap());
        let bound = spec.bounds().mmd_max();
        assert!(a.iter().all(|&v| (0.0..=bound).contains(&v)));

        let cx = [2.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let cy = [0.0, 1.0, 3.0, 0.0, 1.0, 0.0];
        let direct = crate::mmd::mmd_biased(
            &spec,
            &[r(&[0, 1, 2]), r(&[0, 1, 2]), r(&[0, 2, 1]), r(&[2, 0, 1]), r(&[2, 1, 0])],
            &[r(&[0, 2, 1]), r(&[1, 0, 2]), r(&[1, 0, 2]), r(&[1, 0, 2]), r(&[2, 0, 1])],
        )
        .unwrap();
        let mut q = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                q += (cx[i] - cy[i]) * prep.gram().get(i, j) * (cx[j] - cy[j]);
            }
        }
        let counts = q.sqrt() / 5.0;
        assert!((direct - counts).abs() < 1e-12);
    }
}
