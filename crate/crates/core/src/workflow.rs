//! Planning a study until its results are generalizable, and assessing the
//! results of a finished one.
//!
//! The planning loop draws `N0` experiments at a time, re-estimates n* from
//! all results collected so far and stops once `N >= n̂*_N`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, Observation};
use crate::mmd::{EmpiricalSample, PreparedSample, SamplingMode, DEFAULT_N_REP};
use crate::powerlaw::{estimate_n_star, n_grid, quantile_curve, FitMode, MmdQuantileCurve, PowerLawFit};
use crate::ranking::AlternativeSet;
use crate::rng;
use crate::synthetic::DiscreteDistribution;

/// Target (α*, δ*) and the ε* it maps to under a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenRequirement {
    pub alpha_star: f64,
    pub delta_star: f64,
    pub eps_star: f64,
}

impl GenRequirement {
    pub fn new(spec: &KernelSpec, alpha_star: f64, delta_star: f64) -> Result<Self> {
        if !(alpha_star > 0.0 && alpha_star < 1.0) {
            return Err(Error::input(format!("alpha* must lie in (0, 1), got {alpha_star}")));
        }
        Ok(GenRequirement {
            alpha_star,
            delta_star,
            eps_star: spec.epsilon_star(delta_star)?,
        })
    }
}

/// Where new experimental results come from.
pub trait ExperimentSource {
    /// Up to `count` new results; `None` or an empty batch once exhausted.
    fn next_batch(&mut self, count: usize) -> Result<Option<Vec<Observation>>>;
}

/// Runs experiments by sampling a known distribution.
pub struct DistributionSource {
    dist: DiscreteDistribution,
    sampler: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl DistributionSource {
    pub fn new(dist: DiscreteDistribution, seed: u64) -> Result<Self> {
        let sampler = WeightedIndex::new(dist.probs()).map_err(|e| Error::input(e.to_string()))?;
        Ok(DistributionSource {
            dist,
            sampler,
            rng: rng::stream(seed, 0),
        })
    }
}

impl ExperimentSource for DistributionSource {
    fn next_batch(&mut self, count: usize) -> Result<Option<Vec<Observation>>> {
        let support = self.dist.support();
        Ok(Some(
            (0..count)
                .map(|_| support[self.sampler.sample(&mut self.rng)].clone())
                .collect(),
        ))
    }
}

/// Hands out results that were already collected, in order.
pub struct PoolSource {
    items: Vec<Observation>,
    next: usize,
}

impl PoolSource {
    pub fn new(items: Vec<Observation>) -> Self {
        PoolSource { items, next: 0 }
    }
}

impl ExperimentSource for PoolSource {
    fn next_batch(&mut self, count: usize) -> Result<Option<Vec<Observation>>> {
        if self.next >= self.items.len() {
            return Ok(None);
        }
        let end = (self.next + count).min(self.items.len());
        let batch = self.items[self.next..end].to_vec();
        self.next = end;
        Ok(Some(batch))
    }
}

/// Adapts a closure, e.g. one that launches real experiments.
pub struct CallbackSource<F>(pub F);

impl<F> ExperimentSource for CallbackSource<F>
where
    F: FnMut(usize) -> Result<Option<Vec<Observation>>>,
{
    fn next_batch(&mut self, count: usize) -> Result<Option<Vec<Observation>>> {
        (self.0)(count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    /// Experiments added per iteration.
    pub n0: usize,
    pub max_iterations: usize,
    pub max_n: usize,
    pub n_rep: usize,
    pub fit_mode: FitMode,
    pub mode: SamplingMode,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            n0: 20,
            max_iterations: 20,
            max_n: 10_000,
            n_rep: DEFAULT_N_REP,
            fit_mode: FitMode::Free,
            mode: SamplingMode::WithoutReplacement,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    SourceExhausted,
    CapReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    /// Results available in this iteration.
    pub n: usize,
    pub curve: Option<MmdQuantileCurve>,
    pub fit: Option<PowerLawFit>,
    pub n_hat: Option<u64>,
    /// Fit fallbacks and failures.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowReport {
    pub kernel: String,
    pub requirement: GenRequirement,
    pub iterations: Vec<Iteration>,
    /// Estimate from the last iteration that produced one.
    pub n_hat: Option<u64>,
    pub stopped_reason: StopReason,
    pub generalizable: bool,
    pub seed: u64,
}

impl WorkflowReport {
    pub fn final_n(&self) -> usize {
        self.iterations.last().map_or(0, |it| it.n)
    }

    /// One row per iteration.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "N", "n_hat", "beta0", "beta1", "residual", "note"])?;
        for (i, it) in self.iterations.iter().enumerate() {
            let fit = |f: fn(&PowerLawFit) -> f64| it.fit.as_ref().map(|x| f(x).to_string()).unwrap_or_default();
            out.write_record([
                i.to_string(),
                it.n.to_string(),
                it.n_hat.map(|v| v.to_string()).unwrap_or_default(),
                fit(|f| f.beta0),
                fit(|f| f.beta1),
                fit(|f| f.residual),
                it.note.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()
    }
}

/// Estimate of n* from one sample of results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub n: usize,
    pub n_hat: u64,
    pub generalizable: bool,
    pub curve: MmdQuantileCurve,
    pub fit: Option<PowerLawFit>,
    pub note: Option<String>,
}

fn assess_prepared(
    prepared: &PreparedSample,
    req: &GenRequirement,
    n_rep: usize,
    fit_mode: FitMode,
    mode: SamplingMode,
    seed: u64,
) -> Result<(MmdQuantileCurve, Result<crate::powerlaw::NStarEstimate>)> {
    let big_n = prepared.len();
    let curve = quantile_curve(prepared, &n_grid(big_n), req.alpha_star, n_rep, mode, seed)?;
    let estimate = estimate_n_star(&curve, fit_mode, req.eps_star);
    Ok((curve, estimate))
}

/// Estimates n* from an existing sample and checks `N >= n̂*`.
pub fn assess_study(
    sample: &EmpiricalSample,
    spec: &KernelSpec,
    req: &GenRequirement,
    n_rep: usize,
    fit_mode: FitMode,
    seed: u64,
) -> Result<Assessment> {
    if sample.len() < 4 {
        return Err(Error::Size(format!(
            "assessing generalizability needs at least 4 results, got {}",
            sample.len()
        )));
    }
    let prepared = PreparedSample::new(sample, spec)?;
    let (curve, estimate) = assess_prepared(&prepared, req, n_rep, fit_mode, SamplingMode::WithoutReplacement, seed)?;
    let estimate = estimate?;
    Ok(Assessment {
        n: sample.len(),
        n_hat: estimate.n_hat,
        generalizable: sample.len() as u64 >= estimate.n_hat,
        curve,
        fit: estimate.fit,
        note: estimate.note,
    })
}

fn ingest(
    spec: &KernelSpec,
    pool: &mut Vec<Observation>,
    batch: Vec<Observation>,
    iteration: usize,
) -> Result<()> {
    for x in batch {
        let reference = pool.first().unwrap_or(&x);
        reference
            .check_compatible(&x)
            .and_then(|_| spec.check(&x))
            .map_err(|e| Error::Ingest {
                iteration,
                message: e.to_string(),
            })?;
        pool.push(x);
    }
    Ok(())
}

/// Adds `N0` results per iteration until `N >= n̂*_N`, the source runs dry
/// or a cap is hit. Fit failures are recorded and the loop moves on.
pub fn run_generalizable_study(
    source: &mut dyn ExperimentSource,
    spec: &KernelSpec,
    req: &GenRequirement,
    config: &WorkflowConfig,
    seed: u64,
) -> Result<WorkflowReport> {
    if config.n0 < 4 {
        return Err(Error::input(format!("N0 must be at least 4, got {}", config.n0)));
    }
    if config.max_iterations == 0 {
        return Err(Error::input("max_iterations must be positive"));
    }
    let mut pool = Vec::new();
    let mut iterations = Vec::new();
    let mut n_hat = None;
    let stopped_reason = loop {
        let iteration = iterations.len();
        let batch = source.next_batch(config.n0)?.unwrap_or_default();
        if batch.is_empty() {
            break StopReason::SourceExhausted;
        }
        ingest(spec, &mut pool, batch, iteration)?;
        let big_n = pool.len();

        let sample = EmpiricalSample::new(pool.clone(), AlternativeSet::indexed(pool[0].n_alternatives())?, "")?;
        let step = if big_n < 4 {
            Iteration {
                n: big_n,
                curve: None,
                fit: None,
                n_hat: None,
                note: Some("fewer than 4 results".into()),
            }
        } else {
            let prepared = PreparedSample::new(&sample, spec)?;
            let (curve, estimate) = assess_prepared(
                &prepared,
                req,
                config.n_rep,
                config.fit_mode,
                config.mode,
                rng::derive_seed(seed, iteration as u64),
            )?;
            match estimate {
                Ok(e) => Iteration {
                    n: big_n,
                    curve: Some(curve),
                    fit: e.fit,
                    n_hat: Some(e.n_hat),
                    note: e.note,
                },
                Err(e @ (Error::Fit { .. } | Error::Numeric(_))) => {
                    log::warn!("iteration {iteration}: {e}");
                    Iteration {
                        n: big_n,
                        curve: Some(curve),
                        fit: None,
                        n_hat: None,
                        note: Some(e.to_string()),
                    }
                }
                Err(e) => return Err(e),
            }
        };
        if step.n_hat.is_some() {
            n_hat = step.n_hat;
        }
        log::info!("iteration {iteration}: N = {big_n}, n_hat = {:?}", step.n_hat);
        let done = step.n_hat.is_some_and(|h| big_n as u64 >= h);
        iterations.push(step);
        if done {
            break StopReason::Converged;
        }
        if iterations.len() >= config.max_iterations || big_n + config.n0 > config.max_n {
            break StopReason::CapReached;
        }
    };
    let final_n = iterations.last().map_or(0, |it: &Iteration| it.n) as u64;
    Ok(WorkflowReport {
        kernel: spec.to_string(),
        requirement: *req,
        iterations,
        n_hat,
        stopped_reason,
        generalizable: n_hat.is_some_and(|h| final_n >= h),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::Ranking;
    use crate::synthetic::explicit_distribution;

    fn r(v: &[usize]) -> Observation {
        Observation::Ranking(Ranking::new(v.to_vec()).unwrap())
    }

    #[test]
    fn point_mass_converges_immediately() {
        let spec = KernelSpec::jaccard(3, 1).unwrap();
        let req = GenRequirement::new(&spec, 0.95, 0.05).unwrap();
        let dist = explicit_distribution(vec![(r(&[0, 1, 2]), 1.0)]).unwrap();
        let mut src = DistributionSource::new(dist, 1).unwrap();
        let rep = run_generalizable_study(&mut src, &spec, &req, &WorkflowConfig::default(), 5).unwrap();
        assert_eq!(rep.stopped_reason, StopReason::Converged);
        assert_eq!(rep.n_hat, Some(1));
        assert_eq!(rep.iterations.len(), 1);
        assert!(rep.generalizable);
    }

    #[test]
    fn identical_sample_is_generalizable() {
        let spec = KernelSpec::mallows(3, 1.0 / 3.0).unwrap();
        let req = GenRequirement::new(&spec, 0.95, 0.05).unwrap();
        let s = EmpiricalSample::from_rankings(vec![Ranking::new(vec![1, 0, 2]).unwrap(); 30]).unwrap();
        let a = assess_study(&s, &spec, &req, 100, FitMode::Free, 0).unwrap();
        assert_eq!(a.n_hat, 1);
        assert!(a.generalizable);
    }

    #[test]
    fn alternating_pair_gives_finite_estimate() {
        let spec = KernelSpec::mallows(3, 1.0 / 3.0).unwrap();
        let req = GenRequirement::new(&spec, 0.95, 0.05).unwrap();
        let x = Ranking::new(vec![0, 1, 2]).unwrap();
        let y = Ranking::new(vec![2, 1, 0]).unwrap();
        let s = EmpiricalSample::from_rankings(vec![x.clone(), y.clone(), x, y]).unwrap();
        let a = assess_study(&s, &spec, &req, 100, FitMode::Free, 0).unwrap();
        assert!(a.n_hat >= 1);
        let tiny = EmpiricalSample::from_rankings(vec![Ranking::new(vec![0, 1]).unwrap(); 3]).unwrap();
        assert!(assess_study(&tiny, &KernelSpec::jaccard(2, 1).unwrap(), &req, 10, FitMode::Free, 0).is_err());
    }

    #[test]
    fn malformed_batch_reports_iteration() {
        let spec = KernelSpec::jaccard(3, 1).unwrap();
        let req = GenRequirement::new(&spec, 0.95, 0.05).unwrap();
        let mut calls = 0;
        let mut src = CallbackSource(|count: usize| {
            calls += 1;
            if calls == 1 {
                Ok(Some(vec![r(&[0, 1, 2]), r(&[2, 1, 0])].into_iter().cycle().take(count).collect()))
            } else {
                Ok(Some(vec![r(&[0, 1]); count]))
            }
        });
        let cfg = WorkflowConfig { n0: 6, ..WorkflowConfig::default() };
        let err = run_generalizable_study(&mut src, &spec, &req, &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::Ingest { iteration: 1, .. }), "{err}");
    }

    #[test]
    fn pool_exhaustion() {
        let spec = KernelSpec::jaccard(4, 1).unwrap();
        let req = GenRequirement::new(&spec, 0.95, 0.01).unwrap();
        let items: Vec<Observation> = (0..10)
            .map(|i| {
                let mut v = vec![1; 4];
                v[i % 4] = 0;
                r(&v)
            })
            .collect();
        let mut src = PoolSource::new(items);
        let cfg = WorkflowConfig { n0: 10, ..WorkflowConfig::default() };
        let rep = run_generalizable_study(&mut src, &spec, &req, &cfg, 0).unwrap();
        assert_eq!(rep.stopped_reason, StopReason::SourceExhausted);
        assert!(!rep.generalizable);
        assert!(rep.n_hat.unwrap() > 10);
    }

    #[test]
    fn small_n0_rejected() {
        let spec = KernelSpec::jaccard(3, 1).unwrap();
        let req = GenRequirement::new(&spec, 0.95, 0.05).unwrap();
        let mut src = PoolSource::new(vec![r(&[0, 1, 2]); 10]);
        let cfg = WorkflowConfig { n0: 3, ..WorkflowConfig::default() };
        assert!(run_generalizable_study(&mut src, &spec, &req, &cfg, 0).is_err());
    }
}
