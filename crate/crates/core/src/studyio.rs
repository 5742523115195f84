//! Ingestion of long-format result tables and emission of reports.
//!
//! One CSV row holds one score: an alternative evaluated under one
//! experimental condition. Every other column is a factor whose role the
//! schema declares:
//!
//! - design factors split the study into configurations, analyzed separately;
//! - generalizability factors identify the conditions a configuration is
//!   sampled over, one ranking per condition;
//! - stochasticity factors (seeds, folds) are averaged out;
//! - held-constant factors must take a single value and are then ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{median_gamma, recommended_param, KernelFamily, KernelKind, KernelSpec, Observation, Recommended};
use crate::mmd::{EmpiricalSample, PreparedSample, SamplingMode};
use crate::powerlaw::{estimate_n_star, n_grid, quantile_curves, FitMode, MmdQuantileCurve};
use crate::ranking::{ranking_from_scores, AlternativeSet, Ranking};
use crate::rng;
use crate::workflow::GenRequirement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorRole {
    Design,
    Generalizability,
    Stochasticity,
    HeldConstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Unevaluated alternatives share a new worst tier.
    #[default]
    ImputeWorstRank,
    DropCondition,
}

/// How repeated scores over stochasticity factors are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

fn default_true() -> bool {
    true
}

fn default_coverage() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySchema {
    pub alternative_column: String,
    pub score_column: String,
    pub factor_roles: BTreeMap<String, FactorRole>,
    #[serde(default = "default_true")]
    pub higher_is_better: bool,
    #[serde(default)]
    pub tie_tol: f64,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
    /// Minimum fraction of alternatives a condition must have evaluated.
    #[serde(default = "default_coverage")]
    pub coverage_row: f64,
    /// Minimum fraction of conditions an alternative must cover.
    #[serde(default = "default_coverage")]
    pub coverage_col: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl StudySchema {
    /// Reads a schema from TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let schema: StudySchema = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        schema.validate().map_err(|e| parse_err(e.to_string()))?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alternative_column == self.score_column {
            return Err(Error::input("alternative and score columns must differ"));
        }
        for c in [&self.alternative_column, &self.score_column] {
            if self.factor_roles.contains_key(c) {
                return Err(Error::input(format!("column {c:?} cannot also be a factor")));
            }
        }
        if self.columns(FactorRole::Generalizability).is_empty() {
            return Err(Error::input("the schema needs at least one generalizability factor"));
        }
        for (name, v) in [("coverage_row", self.coverage_row), ("coverage_col", self.coverage_col)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::input(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.tie_tol >= 0.0 && self.tie_tol.is_finite()) {
            return Err(Error::input(format!("tie_tol must be finite and >= 0, got {}", self.tie_tol)));
        }
        Ok(())
    }

    /// Factor columns with `role`, in name order.
    pub fn columns(&self, role: FactorRole) -> Vec<String> {
        self.factor_roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(c, _)| c.clone())
            .collect()
    }
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    /// Line in the file, header included.
    pub line: u64,
    pub alternative: String,
    /// `None` for an empty score cell.
    pub score: Option<f64>,
    pub design: Vec<String>,
    pub condition: Vec<String>,
    pub stochastic: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub path: PathBuf,
    pub design_factors: Vec<String>,
    pub generalizability_factors: Vec<String>,
    pub stochasticity_factors: Vec<String>,
    pub rows: Vec<RawRow>,
}

/// Parses a long-format CSV according to `schema`.
pub fn load_long_table(path: &Path, schema: &StudySchema) -> Result<RawTable> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_long_table(file, path, schema)
}

fn read_long_table<R: std::io::Read>(reader: R, path: &Path, schema: &StudySchema) -> Result<RawTable> {
    schema.validate()?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(format!("missing column {name:?}")))
    };
    let alt_col = col(&schema.alternative_column)?;
    let score_col = col(&schema.score_column)?;
    let cols = |role| -> Result<(Vec<String>, Vec<usize>)> {
        let names = schema.columns(role);
        let idx = names.iter().map(|n| col(n)).collect::<Result<_>>()?;
        Ok((names, idx))
    };
    let (design_factors, design_idx) = cols(FactorRole::Design)?;
    let (generalizability_factors, gen_idx) = cols(FactorRole::Generalizability)?;
    let (stochasticity_factors, stoch_idx) = cols(FactorRole::Stochasticity)?;
    let (held_names, held_idx) = cols(FactorRole::HeldConstant)?;
    for h in headers.iter() {
        if h != schema.alternative_column && h != schema.score_column && !schema.factor_roles.contains_key(h) {
            log::warn!("{}: column {h:?} has no declared role and is ignored", path.display());
        }
    }

    let mut held_values: Vec<Option<(String, u64)>> = vec![None; held_idx.len()];
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("").to_string();
        for (k, &i) in held_idx.iter().enumerate() {
            let v = field(i);
            match &held_values[k] {
                None => held_values[k] = Some((v, line)),
                Some((first, first_line)) if *first != v => {
                    return Err(parse_err(format!(
                        "held-constant column {:?} takes {first:?} on line {first_line} and {v:?} on line {line}",
                        held_names[k]
                    )));
                }
                Some(_) => {}
            }
        }
        let alternative = field(alt_col);
        if alternative.is_empty() {
            return Err(parse_err(format!("line {line}: empty alternative")));
        }
        let raw = field(score_col);
        let score = if raw.is_empty() {
            None
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(format!("line {line}: score {raw:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("line {line}: score {raw:?} is not finite")));
            }
            Some(v)
        };
        rows.push(RawRow {
            line,
            alternative,
            score,
            design: design_idx.iter().map(|&i| field(i)).collect(),
            condition: gen_idx.iter().map(|&i| field(i)).collect(),
            stochastic: stoch_idx.iter().map(|&i| field(i)).collect(),
        });
    }
    Ok(RawTable {
        path: path.to_path_buf(),
        design_factors,
        generalizability_factors,
        stochasticity_factors,
        rows,
    })
}

/// Results of one configuration, one ranking per surviving condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationResults {
    /// Design-factor levels.
    pub key: BTreeMap<String, String>,
    /// Conditions in sample order, each as its generalizability levels joined by `/`.
    pub conditions: Vec<String>,
    pub sample: EmpiricalSample,
    /// Aggregated score vectors of the conditions where every retained
    /// alternative was evaluated; used by the RBF kernel.
    pub scores: Option<EmpiricalSample>,
    /// Conditions with at least one imputed alternative.
    pub imputed_conditions: usize,
}

impl ConfigurationResults {
    pub fn label(&self) -> String {
        config_label(&self.key)
    }
}

fn config_label(key: &BTreeMap<String, String>) -> String {
    if key.is_empty() {
        return "all".into();
    }
    key.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedConfiguration {
    pub key: BTreeMap<String, String>,
    pub reason: String,
}

/// Where every input row ended up.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowAccounting {
    pub total: usize,
    /// Rows whose score entered a ranking.
    pub used: usize,
    /// Rows filtered out, by reason.
    pub filtered: BTreeMap<String, usize>,
}

impl RowAccounting {
    pub fn reconciles(&self) -> bool {
        self.used + self.filtered.values().sum::<usize>() == self.total
    }

    fn filter(&mut self, reason: &str, count: usize) {
        if count > 0 {
            *self.filtered.entry(reason.to_string()).or_default() += count;
        }
    }
}

pub const REASON_MISSING_SCORE: &str = "missing score";
pub const REASON_CONDITION_COVERAGE: &str = "condition below coverage";
pub const REASON_ALTERNATIVE_COVERAGE: &str = "alternative below coverage";
pub const REASON_DROPPED_CONDITION: &str = "condition with missing alternatives dropped";
pub const REASON_EXCLUDED_CONFIGURATION: &str = "configuration excluded";

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfigurations {
    pub configurations: Vec<ConfigurationResults>,
    pub excluded: Vec<ExcludedConfiguration>,
    pub accounting: RowAccounting,
}

/// Rows of one (condition, alternative) cell.
#[derive(Default)]
struct Cell {
    scores: Vec<f64>,
    rows: usize,
}

fn aggregate(scores: &mut [f64], how: Aggregation) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let m = scores.len();
    Some(match how {
        Aggregation::Mean => scores.iter().sum::<f64>() / m as f64,
        Aggregation::Median => {
            scores.sort_by(f64::total_cmp);
            if m % 2 == 1 {
                scores[m / 2]
            } else {
                0.5 * (scores[m / 2 - 1] + scores[m / 2])
            }
        }
    })
}

/// Groups rows into configurations and turns each condition into a ranking:
/// averages over stochasticity factors, filters conditions and then
/// alternatives by coverage, and fills in unevaluated alternatives per the
/// missing-value policy.
pub fn build_configurations(table: &RawTable, schema: &StudySchema) -> Result<StudyConfigurations> {
    schema.validate()?;
    // design key -> condition -> alternative -> cell; BTreeMaps make the
    // result independent of row order
    let mut grouped: BTreeMap<Vec<String>, BTreeMap<Vec<String>, BTreeMap<String, Cell>>> = BTreeMap::new();
    for row in &table.rows {
        let cell = grouped
            .entry(row.design.clone())
            .or_default()
            .entry(row.condition.clone())
            .or_default()
            .entry(row.alternative.clone())
            .or_default();
        cell.rows += 1;
        if let Some(s) = row.score {
            cell.scores.push(s);
        }
    }

    let mut out = StudyConfigurations {
        configurations: Vec::new(),
        excluded: Vec::new(),
        accounting: RowAccounting {
            total: table.rows.len(),
            ..Default::default()
        },
    };
    for (design, mut conditions) in grouped {
        let key: BTreeMap<String, String> = table.design_factors.iter().cloned().zip(design).collect();
        let acc = &mut out.accounting;
        for cells in conditions.values() {
            for c in cells.values() {
                acc.filter(REASON_MISSING_SCORE, c.rows - c.scores.len());
            }
        }
        let mut cell_scores: BTreeMap<Vec<String>, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
        let alternatives: BTreeSet<String> = conditions.values().flat_map(|c| c.keys().cloned()).collect();
        for (cond, cells) in conditions.iter_mut() {
            let entry = cell_scores.entry(cond.clone()).or_default();
            for (alt, c) in cells.iter_mut() {
                if let Some(v) = aggregate(&mut c.scores, schema.aggregation) {
                    entry.insert(alt.clone(), (v, c.scores.len()));
                }
            }
        }

        let n_alts = alternatives.len() as f64;
        cell_scores.retain(|_, cells| {
            let keep = cells.len() as f64 >= schema.coverage_row * n_alts - 1e-9;
            if !keep {
                acc.filter(REASON_CONDITION_COVERAGE, cells.values().map(|c| c.1).sum());
            }
            keep
        });
        let n_conds = cell_scores.len() as f64;
        let kept_alts: Vec<String> = alternatives
            .into_iter()
            .filter(|a| {
                let covered = cell_scores.values().filter(|c| c.contains_key(a)).count() as f64;
                let keep = n_conds > 0.0 && covered >= schema.coverage_col * n_conds - 1e-9;
                if !keep {
                    let rows = cell_scores.values().filter_map(|c| c.get(a)).map(|c| c.1).sum();
                    acc.filter(REASON_ALTERNATIVE_COVERAGE, rows);
                }
                keep
            })
            .collect();

        let mut rankings = Vec::new();
        let mut score_vectors = Vec::new();
        let mut condition_names = Vec::new();
        let mut imputed = 0;
        let mut used = 0;
        for (cond, cells) in &cell_scores {
            let rows_here: usize = kept_alts.iter().filter_map(|a| cells.get(a)).map(|c| c.1).sum();
            let observed: Vec<(usize, f64)> = kept_alts
                .iter()
                .enumerate()
                .filter_map(|(i, a)| cells.get(a).map(|c| (i, c.0)))
                .collect();
            let complete = observed.len() == kept_alts.len();
            if observed.is_empty() || (!complete && schema.missing_policy == MissingPolicy::DropCondition) {
                acc.filter(REASON_DROPPED_CONDITION, rows_here);
                continue;
            }
            let scores: Vec<f64> = observed.iter().map(|o| o.1).collect();
            let partial = ranking_from_scores(&scores, schema.higher_is_better, schema.tie_tol)?;
            let worst = partial.max_tier() + 1;
            let mut ranks = vec![worst; kept_alts.len()];
            for (&(i, _), &r) in observed.iter().zip(partial.ranks()) {
                ranks[i] = r;
            }
            if !complete {
                imputed += 1;
            } else {
                score_vectors.push(Observation::Scores(scores));
            }
            rankings.push(Observation::Ranking(Ranking::new(ranks)?));
            condition_names.push(cond.join("/"));
            used += rows_here;
        }

        if rankings.len() < 2 {
            let reason = format!("{} usable condition(s) after filtering, need at least 2", rankings.len());
            log::warn!("configuration {}: {reason}", config_label(&key));
            acc.filter(REASON_EXCLUDED_CONFIGURATION, used);
            out.excluded.push(ExcludedConfiguration { key, reason });
            continue;
        }
        acc.used += used;
        let names = AlternativeSet::new(kept_alts)?;
        let label = config_label(&key);
        let scores = if score_vectors.len() >= 2 {
            Some(EmpiricalSample::new(score_vectors, names.clone(), label.clone())?)
        } else {
            None
        };
        out.configurations.push(ConfigurationResults {
            sample: EmpiricalSample::new(rankings, names, label)?,
            key,
            conditions: condition_names,
            scores,
            imputed_conditions: imputed,
        });
    }
    Ok(out)
}

/// A kernel choice made before the alternatives of a configuration are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRequest {
    pub kind: KernelKind,
    pub nu: Option<f64>,
    pub gamma: Option<f64>,
    pub k: Option<usize>,
    /// Borda target, by alternative name.
    pub target: Option<String>,
}

impl KernelRequest {
    pub fn new(kind: KernelKind) -> Self {
        KernelRequest {
            kind,
            nu: None,
            gamma: None,
            k: None,
            target: None,
        }
    }

    /// The kernel for one configuration and the sample it applies to.
    /// Unset parameters take their recommended values; Jaccard defaults to k = 1.
    pub fn resolve<'a>(&self, config: &'a ConfigurationResults) -> Result<(KernelSpec, &'a EmpiricalSample)> {
        let alts = config.sample.alternatives();
        let n_a = alts.len();
        let recommended_nu = || match recommended_param(self.kind, n_a)? {
            Recommended::Value(v) => Ok(v),
            _ => Err(Error::input(format!("no recommended parameter for {}", self.kind))),
        };
        let family = match self.kind {
            KernelKind::Borda => {
                let name = self
                    .target
                    .as_deref()
                    .ok_or_else(|| Error::input("the Borda kernel needs a target alternative"))?;
                let target = alts
                    .index_of(name)
                    .ok_or_else(|| Error::input(format!("target alternative {name:?} is not in configuration {}", config.label())))?;
                KernelFamily::Borda {
                    target,
                    nu: self.nu.map_or_else(recommended_nu, Ok)?,
                }
            }
            KernelKind::Mallows => KernelFamily::Mallows {
                nu: self.nu.map_or_else(recommended_nu, Ok)?,
            },
            KernelKind::Jaccard => KernelFamily::Jaccard { k: self.k.unwrap_or(1) },
            KernelKind::Rbf => {
                let scores = config.scores.as_ref().ok_or_else(|| {
                    Error::input(format!(
                        "configuration {} has fewer than 2 fully evaluated conditions for the RBF kernel",
                        config.label()
                    ))
                })?;
                let gamma = match self.gamma {
                    Some(g) => g,
                    None => {
                        let vectors: Vec<Vec<f64>> = scores
                            .results()
                            .iter()
                            .filter_map(|x| match x {
                                Observation::Scores(s) => Some(s.clone()),
                                Observation::Ranking(_) => None,
                            })
                            .collect();
                        median_gamma(&vectors)
                    }
                };
                return Ok((KernelSpec::rbf(n_a, gamma)?, scores));
            }
        };
        Ok((KernelSpec::new(family, n_a)?, &config.sample))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFit {
    pub beta0: f64,
    pub beta1: f64,
    pub residual: f64,
}

/// Generalizability of one configuration at one (α*, δ*).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizabilityReport {
    pub config_key: BTreeMap<String, String>,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_hat: u64,
    pub alpha_star: f64,
    pub delta_star: f64,
    pub eps_star: f64,
    pub kernel: String,
    pub generalizable: bool,
    pub curve: Vec<(usize, f64)>,
    pub fit: Option<ReportFit>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationFailure {
    pub config_key: BTreeMap<String, String>,
    pub alpha_star: Option<f64>,
    pub delta_star: Option<f64>,
    pub reason: String,
    /// True when the cause is numerical rather than bad input.
    pub numeric: bool,
}

/// Five-number summary of n̂* across configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NHatSummary {
    pub alpha_star: f64,
    pub delta_star: f64,
    pub count: usize,
    pub min: u64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyAnalysis {
    pub reports: Vec<GeneralizabilityReport>,
    pub failures: Vec<ConfigurationFailure>,
    pub summary: Vec<NHatSummary>,
}

/// Settings shared by every configuration of an analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub alphas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub n_rep: usize,
    pub fit_mode: FitMode,
    pub mode: SamplingMode,
    pub seed: u64,
}

fn linear_quantile(sorted: &[u64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] as f64 + (h - h.floor()) * (sorted[hi] as f64 - sorted[lo] as f64)
}

fn summarize(reports: &[GeneralizabilityReport], alpha: f64, delta: f64) -> Option<NHatSummary> {
    let mut v: Vec<u64> = reports
        .iter()
        .filter(|r| r.alpha_star == alpha && r.delta_star == delta)
        .map(|r| r.n_hat)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    Some(NHatSummary {
        alpha_star: alpha,
        delta_star: delta,
        count: v.len(),
        min: v[0],
        q1: linear_quantile(&v, 0.25),
        median: linear_quantile(&v, 0.5),
        q3: linear_quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

/// Estimates n̂* for every configuration at every (α*, δ*) of the sweep.
///
/// Configuration `i` draws from the seed derived from `(seed, i)`, and all
/// grid points of one configuration share the same MMD draws. A failing
/// configuration is recorded and the rest proceed.
pub fn analyze_study(
    configs: &[ConfigurationResults],
    request: &KernelRequest,
    settings: &AnalysisSettings,
) -> Result<StudyAnalysis> {
    if settings.alphas.is_empty() || settings.deltas.is_empty() {
        return Err(Error::input("need at least one alpha* and one delta*"));
    }
    let per_config: Vec<(Vec<GeneralizabilityReport>, Vec<ConfigurationFailure>)> = configs
        .par_iter()
        .enumerate()
        .map(|(i, config)| analyze_one(config, request, settings, rng::derive_seed(settings.seed, i as u64)))
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_config {
        reports.extend(r);
        failures.extend(f);
    }
    let summary = settings
        .alphas
        .iter()
        .flat_map(|&a| settings.deltas.iter().map(move |&d| (a, d)))
        .filter_map(|(a, d)| summarize(&reports, a, d))
        .collect();
    Ok(StudyAnalysis {
        reports,
        failures,
        summary,
    })
}

fn analyze_one(
    config: &ConfigurationResults,
    request: &KernelRequest,
    settings: &AnalysisSettings,
    seed: u64,
) -> (Vec<GeneralizabilityReport>, Vec<ConfigurationFailure>) {
    let fail = |e: Error, alpha: Option<f64>, delta: Option<f64>| ConfigurationFailure {
        config_key: config.key.clone(),
        alpha_star: alpha,
        delta_star: delta,
        reason: e.to_string(),
        numeric: e.is_numeric(),
    };
    let curves = (|| -> Result<(KernelSpec, usize, Vec<MmdQuantileCurve>)> {
        let (spec, sample) = request.resolve(config)?;
        if sample.len() < 4 {
            return Err(Error::Size(format!(
                "{} results, at least 4 are needed",
                sample.len()
            )));
        }
        for &a in &settings.alphas {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::input(format!("alpha* must lie in (0, 1), got {a}")));
            }
        }
        let prepared = PreparedSample::new(sample, &spec)?;
        let curves = quantile_curves(
            &prepared,
            &n_grid(sample.len()),
            &settings.alphas,
            settings.n_rep,
            settings.mode,
            seed,
        )?;
        Ok((spec, sample.len(), curves))
    })();
    let (spec, big_n, curves) = match curves {
        Ok(c) => c,
        Err(e) => return (Vec::new(), vec![fail(e, None, None)]),
    };
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for curve in &curves {
        for &delta in &settings.deltas {
            let alpha = curve.alpha;
            let outcome = GenRequirement::new(&spec, alpha, delta)
                .and_then(|req| Ok((req, estimate_n_star(curve, settings.fit_mode, req.eps_star)?)));
            match outcome {
                Ok((req, est)) => reports.push(GeneralizabilityReport {
                    config_key: config.key.clone(),
                    n: big_n,
                    n_hat: est.n_hat,
                    alpha_star: alpha,
                    delta_star: delta,
                    eps_star: req.eps_star,
                    kernel: spec.to_string(),
                    generalizable: big_n as u64 >= est.n_hat,
                    curve: curve.points.clone(),
                    fit: est.fit.map(|f| ReportFit {
                        beta0: f.beta0,
                        beta1: f.beta1,
                        residual: f.residual,
                    }),
                    seed,
                }),
                Err(e) => failures.push(fail(e, Some(alpha), Some(delta))),
            }
        }
    }
    (reports, failures)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

const KEY_PREFIX: &str = "key.";
const CSV_FIELDS: [&str; 12] = [
    "N",
    "n_hat",
    "alpha_star",
    "delta_star",
    "eps_star",
    "kernel",
    "generalizable",
    "fit_beta0",
    "fit_beta1",
    "fit_residual",
    "seed",
    "curve",
];

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes reports as a JSON array, or as CSV with one `key.<factor>` column
/// per design factor and the curve encoded as `n:q` pairs joined by `;`.
pub fn emit_report(reports: &[GeneralizabilityReport], format: ReportFormat, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_report(reports, format, std::io::BufWriter::new(file)).map_err(io_err(path))
}

pub fn write_report<W: std::io::Write>(
    reports: &[GeneralizabilityReport],
    format: ReportFormat,
    mut w: W,
) -> std::io::Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut w, reports)?;
            writeln!(w)?;
            w.flush()
        }
        ReportFormat::Csv => {
            let keys: BTreeSet<&String> = reports.iter().flat_map(|r| r.config_key.keys()).collect();
            let mut out = csv::Writer::from_writer(w);
            let header: Vec<String> = keys
                .iter()
                .map(|k| format!("{KEY_PREFIX}{k}"))
                .chain(CSV_FIELDS.iter().map(|s| s.to_string()))
                .collect();
            out.write_record(&header)?;
            for r in reports {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                let curve: Vec<String> = r.curve.iter().map(|(n, q)| format!("{n}:{q}")).collect();
                let mut row: Vec<String> = keys
                    .iter()
                    .map(|k| r.config_key.get(*k).cloned().unwrap_or_default())
                    .collect();
                row.extend([
                    r.n.to_string(),
                    r.n_hat.to_string(),
                    r.alpha_star.to_string(),
                    r.delta_star.to_string(),
                    r.eps_star.to_string(),
                    r.kernel.clone(),
                    r.generalizable.to_string(),
                    opt(r.fit.as_ref().map(|f| f.beta0)),
                    opt(r.fit.as_ref().map(|f| f.beta1)),
                    opt(r.fit.as_ref().map(|f| f.residual)),
                    r.seed.to_string(),
                    curve.join(";"),
                ]);
                out.write_record(&row)?;
            }
            out.flush()
        }
    }
}

/// Reads reports written by [`emit_report`].
pub fn read_report(path: &Path, format: ReportFormat) -> Result<Vec<GeneralizabilityReport>> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(io_err(path))?;
    match format {
        ReportFormat::Json => serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| parse_err(e.to_string())),
        ReportFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(file);
            let headers = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
            let mut reports = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| parse_err(e.to_string()))?;
                let line = rec.position().map_or(0, |p| p.line());
                let get = |name: &str| -> Result<&str> {
                    headers
                        .iter()
                        .position(|h| h == name)
                        .and_then(|i| rec.get(i))
                        .ok_or_else(|| parse_err(format!("line {line}: missing field {name:?}")))
                };
                fn num<T: std::str::FromStr>(s: &str, name: &str, line: u64, path: &Path) -> Result<T> {
                    s.parse().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        message: format!("line {line}: field {name:?} has bad value {s:?}"),
                    })
                }
                let opt = |name: &str| -> Result<Option<f64>> {
                    let s = get(name)?;
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        num(s, name, line, path).map(Some)
                    }
                };
                let config_key = headers
                    .iter()
                    .zip(rec.iter())
                    .filter_map(|(h, v)| h.strip_prefix(KEY_PREFIX).map(|k| (k.to_string(), v.to_string())))
                    .collect();
                let curve_text = get("curve")?;
                let curve = if curve_text.is_empty() {
                    Vec::new()
                } else {
                    curve_text
                        .split(';')
                        .map(|pair| {
                            let (n, q) = pair
                                .split_once(':')
                                .ok_or_else(|| parse_err(format!("line {line}: bad curve point {pair:?}")))?;
                            Ok((num(n, "curve", line, path)?, num(q, "curve", line, path)?))
                        })
                        .collect::<Result<_>>()?
                };
                let fit = match (opt("fit_beta0")?, opt("fit_beta1")?, opt("fit_residual")?) {
                    (Some(beta0), Some(beta1), Some(residual)) => Some(ReportFit { beta0, beta1, residual }),
                    _ => None,
                };
                reports.push(GeneralizabilityReport {
                    config_key,
                    n: num(get("N")?, "N", line, path)?,
                    n_hat: num(get("n_hat")?, "n_hat", line, path)?,
                    alpha_star: num(get("alpha_star")?, "alpha_star", line, path)?,
                    delta_star: num(get("delta_star")?, "delta_star", line, path)?,
                    eps_star: num(get("eps_star")?, "eps_star", line, path)?,
                    kernel: get("kernel")?.to_string(),
                    generalizable: num(get("generalizable")?, "generalizable", line, path)?,
                    curve,
                    fit,
                    seed: num(get("seed")?, "seed", line, path)?,
                });
            }
            Ok(reports)
        }
    }
}
