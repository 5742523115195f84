//! Friedman and Conover–Iman tests, and a demonstration that significance
//! and generalizability answer different questions.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, Observation};
use crate::mmd::{generalizability, EmpiricalSample, SamplingMode, DEFAULT_N_REP};
use crate::ranking::Ranking;
use crate::rng;
use crate::synthetic::{explicit_distribution, sample_from, DiscreteDistribution};

/// Average ranks (1 = best) of the alternatives within one block.
/// Score vectors rank higher scores first.
fn block_ranks(x: &Observation) -> Vec<f64> {
    let better = |i: usize, j: usize| -> std::cmp::Ordering {
        match x {
            Observation::Ranking(r) => r.rank(i).cmp(&r.rank(j)),
            Observation::Scores(s) => s[j].total_cmp(&s[i]),
        }
    };
    let k = x.n_alternatives();
    (0..k)
        .map(|i| {
            let (mut above, mut tied) = (0usize, 0usize);
            for j in (0..k).filter(|&j| j != i) {
                match better(j, i) {
                    std::cmp::Ordering::Less => above += 1,
                    std::cmp::Ordering::Equal => tied += 1,
                    std::cmp::Ordering::Greater => {}
                }
            }
            1.0 + above as f64 + tied as f64 / 2.0
        })
        .collect()
}

struct RankTotals {
    b: f64,
    k: f64,
    /// R_j, sum of ranks of alternative j over blocks.
    sums: Vec<f64>,
    /// A1, sum of all squared ranks.
    a1: f64,
    /// C1 = b k (k+1)² / 4.
    c1: f64,
}

fn rank_totals(sample: &EmpiricalSample) -> Result<RankTotals> {
    let k = sample.n_alternatives();
    if k < 2 {
        return Err(Error::input("rank tests need at least 2 alternatives"));
    }
    if sample.len() < 2 {
        return Err(Error::input("rank tests need at least 2 blocks"));
    }
    let mut sums = vec![0.0; k];
    let mut a1 = 0.0;
    for x in sample.results() {
        for (j, r) in block_ranks(x).into_iter().enumerate() {
            sums[j] += r;
            a1 += r * r;
        }
    }
    let (b, kf) = (sample.len() as f64, k as f64);
    Ok(RankTotals {
        b,
        k: kf,
        sums,
        a1,
        c1: b * kf * (kf + 1.0).powi(2) / 4.0,
    })
}

/// Tie-corrected Friedman statistic
/// `T1 = (k-1) Σ_j (R_j - b(k+1)/2)² / (A1 - C1)` and its chi-square(k-1) tail.
/// Fully tied input gives `(0, 1)`.
pub fn friedman_test(sample: &EmpiricalSample) -> Result<(f64, f64)> {
    let t = rank_totals(sample)?;
    friedman_from_totals(&t)
}

fn friedman_from_totals(t: &RankTotals) -> Result<(f64, f64)> {
    let denom = t.a1 - t.c1;
    if denom <= 1e-9 * t.a1 {
        return Ok((0.0, 1.0));
    }
    let centre = t.b * (t.k + 1.0) / 2.0;
    let stat = (t.k - 1.0) * t.sums.iter().map(|r| (r - centre).powi(2)).sum::<f64>() / denom;
    if stat <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let p = gamma_ur((t.k - 1.0) / 2.0, stat / 2.0);
    Ok((stat, p.clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub friedman_stat: f64,
    pub friedman_p: f64,
    /// Conover–Iman p-values; `None` when the Friedman test does not reject.
    pub ci_pairwise: Option<Vec<Vec<f64>>>,
    pub rank_sums: Vec<f64>,
    /// Alternatives with the smallest rank sum.
    pub best_alternative: Vec<usize>,
    pub best_is_significant: bool,
}

/// Friedman test followed, if it rejects at `significance`, by Conover's
/// pairwise comparisons:
///
/// ```text
/// t_ij = |R_i - R_j| / sqrt(2 (b A1 - Σ R_j²) / ((b-1)(k-1)))
/// ```
///
/// with a two-sided Student-t p-value on (b-1)(k-1) degrees of freedom.
/// `b A1 - Σ R_j²` equals `b (A1 - C1) (1 - T1 / (b (k-1)))`.
pub fn conover_iman(sample: &EmpiricalSample, significance: f64) -> Result<SignificanceResult> {
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::input(format!("significance must lie in (0, 1), got {significance}")));
    }
    let t = rank_totals(sample)?;
    let (friedman_stat, friedman_p) = friedman_from_totals(&t)?;
    let min_sum = t.sums.iter().copied().fold(f64::INFINITY, f64::min);
    let best_alternative: Vec<usize> = (0..t.sums.len())
        .filter(|&j| (t.sums[j] - min_sum).abs() < 1e-9)
        .collect();

    let mut ci_pairwise = None;
    let mut best_is_significant = false;
    if friedman_p <= significance {
        let dof = (t.b - 1.0) * (t.k - 1.0);
        let var = 2.0 * (t.b * t.a1 - t.sums.iter().map(|r| r * r).sum::<f64>()) / dof;
        let student = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::numeric(e.to_string()))?;
        let k = t.sums.len();
        let mut p = vec![vec![1.0; k]; k];
        for i in 0..k {
            for j in (i + 1)..k {
                let diff = (t.sums[i] - t.sums[j]).abs();
                let pij = if var <= 1e-12 {
                    if diff > 1e-9 {
                        0.0
                    } else {
                        1.0
                    }
                } else {
                    (2.0 * student.sf(diff / var.sqrt())).min(1.0)
                };
                p[i][j] = pij;
                p[j][i] = pij;
            }
        }
        if let [best] = best_alternative[..] {
            best_is_significant = (0..k).filter(|&j| j != best).all(|j| p[best][j] < significance);
        }
        ci_pairwise = Some(p);
    }
    Ok(SignificanceResult {
        friedman_stat,
        friedman_p,
        ci_pairwise,
        rank_sums: t.sums,
        best_alternative,
        best_is_significant,
    })
}

/// Two permutations of five alternatives that differ by swapping the best
/// two, with masses 0.55 and 0.45.
pub fn demo_distribution() -> DiscreteDistribution {
    let r = |v: Vec<usize>| Observation::Ranking(Ranking::new(v).expect("valid permutation"));
    explicit_distribution(vec![(r(vec![0, 1, 2, 3, 4]), 0.55), (r(vec![1, 0, 2, 3, 4]), 0.45)])
        .expect("valid distribution")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub reps: usize,
    /// Size of each sample.
    pub n: usize,
    /// Size at which generalizability is measured.
    pub n_gen: usize,
    pub delta_star: f64,
    pub n_rep: usize,
    pub significance: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            reps: 1000,
            n: 20,
            n_gen: 10,
            delta_star: 0.05,
            n_rep: DEFAULT_N_REP,
            significance: 0.05,
        }
    }
}

/// One row of the summary: samples sharing a test outcome and best set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoCell {
    /// `None` in the overall row.
    pub ci_significant: Option<bool>,
    pub best: String,
    pub count: usize,
    pub mean_generalizability: f64,
    pub std_generalizability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub config: DemoConfig,
    pub kernel: String,
    pub eps_star: f64,
    pub friedman_fraction: f64,
    pub ci_fraction: f64,
    pub cells: Vec<DemoCell>,
    pub overall: DemoCell,
    pub seed: u64,
}

impl DemoSummary {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["ci_significant", "best", "count", "mean_generalizability", "std_generalizability"])
            ?;
        for c in self.cells.iter().chain(std::iter::once(&self.overall)) {
            out.write_record([
                c.ci_significant.map_or("all".to_string(), |b| b.to_string()),
                c.best.clone(),
                c.count.to_string(),
                c.mean_generalizability.to_string(),
                c.std_generalizability.to_string(),
            ])
            ?;
        }
        out.flush()
    }
}

fn cell(ci_significant: Option<bool>, best: String, values: &[f64]) -> DemoCell {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    DemoCell {
        ci_significant,
        best,
        count: values.len(),
        mean_generalizability: mean,
        std_generalizability: std,
    }
}

/// Repeatedly samples from [`demo_distribution`], runs both tests and
/// measures `n_gen`-generalizability under the Jaccard kernel with k = 1.
pub fn significance_vs_generalizability_demo(config: &DemoConfig, seed: u64) -> Result<DemoSummary> {
    if config.reps == 0 {
        return Err(Error::input("reps must be positive"));
    }
    let dist = demo_distribution();
    let spec = KernelSpec::jaccard(dist.n_alternatives(), 1)?;
    let eps_star = spec.epsilon_star(config.delta_star)?;
    let outcomes = (0..config.reps)
        .into_par_iter()
        .map(|i| {
            let s = rng::derive_seed(seed, i as u64);
            let sample = sample_from(&dist, config.n, s)?;
            let sig = conover_iman(&sample, config.significance)?;
            let gen = generalizability(
                &sample,
                &spec,
                config.n_gen,
                eps_star,
                config.n_rep,
                SamplingMode::WithoutReplacement,
                rng::derive_seed(s, 1),
            )?;
            Ok((sig, gen))
        })
        .collect::<Result<Vec<_>>>()?;

    let reps = outcomes.len() as f64;
    let friedman_fraction = outcomes.iter().filter(|(s, _)| s.friedman_p <= config.significance).count() as f64 / reps;
    let ci_fraction = outcomes.iter().filter(|(s, _)| s.best_is_significant).count() as f64 / reps;
    let mut groups: BTreeMap<(bool, Vec<usize>), Vec<f64>> = BTreeMap::new();
    for (sig, gen) in &outcomes {
        groups
            .entry((sig.best_is_significant, sig.best_alternative.clone()))
            .or_default()
            .push(*gen);
    }
    let fmt_best = |b: &[usize]| {
        let inner: Vec<String> = b.iter().map(|i| i.to_string()).collect();
        format!("{{{}}}", inner.join(","))
    };
    let cells = groups
        .iter()
        .map(|((ci, best), v)| cell(Some(*ci), fmt_best(best), v))
        .collect();
    let all: Vec<f64> = outcomes.iter().map(|(_, g)| *g).collect();
    Ok(DemoSummary {
        config: config.clone(),
        kernel: spec.to_string(),
        eps_star,
        friedman_fraction,
        ci_fraction,
        cells,
        overall: cell(None, "any".into(), &all),
        seed,
    })
}
