use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use genrank::kernel::{recommended_param, KernelFamily, KernelKind, Recommended};
use genrank::mmd::SamplingMode;
use genrank::ranking::AlternativeSet;
use genrank::sigtest::{demo_distribution, significance_vs_generalizability_demo, DemoConfig};
use genrank::studyio::{
    analyze_study, build_configurations, load_long_table, write_report, AnalysisSettings, KernelRequest, ReportFormat,
    StudySchema,
};
use genrank::synthetic::{
    enumerate_rankings, estimator_accuracy_experiment, explicit_distribution, uniform_distribution, AccuracyConfig,
};
use genrank::workflow::{
    run_generalizable_study, DistributionSource, ExperimentSource, GenRequirement, PoolSource, StopReason,
    WorkflowConfig,
};
use genrank::{rng, DiscreteDistribution, Error, FitMode, KernelSpec, Observation, Ranking};

use crate::{
    AnalyzeArgs, Command, DemoArgs, EnumerateArgs, FitArg, FormatArg, KernelArgs, ModeArg, PlanArgs,
    SimulateArgs, SourceArg, SourceArgs,
};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: if e.is_numeric() { EXIT_NUMERIC } else { EXIT_INPUT },
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Analyze(a) => analyze(a),
        Command::Plan(a) => plan(a),
        Command::Simulate(a) => simulate(a),
        Command::DemoSignificance(a) => demo(a),
        Command::Enumerate(a) => enumerate(a),
    }
}

/// Human-readable lines go to stdout unless the data itself does.
struct Console {
    to_stderr: bool,
}

impl Console {
    fn for_output(output: &Option<PathBuf>) -> Self {
        Console {
            to_stderr: output.is_none(),
        }
    }

    fn line(&self, s: impl AsRef<str>) {
        if self.to_stderr {
            eprintln!("{}", s.as_ref());
        } else {
            println!("{}", s.as_ref());
        }
    }
}

fn write_output(output: &Option<PathBuf>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> CliResult<()> {
    let io_error = |path: &Path, e: io::Error| CliError::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    });
    match output {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_error(path, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn write_json<T: serde::Serialize>(output: &Option<PathBuf>, value: &T) -> CliResult<()> {
    write_output(output, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn fit_mode(f: FitArg) -> FitMode {
    match f {
        FitArg::Free => FitMode::Free,
        FitArg::Fixed => FitMode::Fixed,
    }
}

fn sampling_mode(m: Option<ModeArg>, default: SamplingMode) -> SamplingMode {
    match m {
        None => default,
        Some(ModeArg::Subsample) => SamplingMode::WithoutReplacement,
        Some(ModeArg::Bootstrap) => SamplingMode::WithReplacement,
    }
}

fn check_kernel_flags(k: &KernelArgs) -> CliResult<()> {
    let kind = KernelKind::from(k.kernel);
    let misuse = |flag: &str, allowed: &str| input_error(format!("{flag} only applies to the {allowed} kernel"));
    if k.target_alternative.is_some() && kind != KernelKind::Borda {
        return Err(misuse("--target-alternative", "borda"));
    }
    if k.topk.is_some() && kind != KernelKind::Jaccard {
        return Err(misuse("--topk", "jaccard"));
    }
    if k.nu.is_some() && !matches!(kind, KernelKind::Borda | KernelKind::Mallows) {
        return Err(misuse("--nu", "borda or mallows"));
    }
    if k.gamma.is_some() && kind != KernelKind::Rbf {
        return Err(misuse("--gamma", "rbf"));
    }
    Ok(())
}

fn kernel_request(k: &KernelArgs) -> KernelRequest {
    KernelRequest {
        kind: k.kernel.into(),
        nu: k.nu,
        gamma: k.gamma,
        k: k.topk,
        target: k.target_alternative.clone(),
    }
}

/// Kernel over rankings of `n_a` synthetic alternatives named a0, a1, ...
fn synthetic_spec(k: &KernelArgs, n_a: usize) -> CliResult<KernelSpec> {
    let kind = KernelKind::from(k.kernel);
    let nu = |given: Option<f64>| -> CliResult<f64> {
        match given {
            Some(v) => Ok(v),
            None => match recommended_param(kind, n_a)? {
                Recommended::Value(v) => Ok(v),
                _ => Err(input_error(format!("no default parameter for {kind}"))),
            },
        }
    };
    let family = match kind {
        KernelKind::Borda => {
            let name = k
                .target_alternative
                .as_deref()
                .ok_or_else(|| input_error("--kernel borda needs --target-alternative"))?;
            let target = AlternativeSet::indexed(n_a)?
                .index_of(name)
                .or_else(|| name.parse().ok().filter(|&i: &usize| i < n_a))
                .ok_or_else(|| input_error(format!("unknown alternative {name:?}; use a0..a{}", n_a - 1)))?;
            KernelFamily::Borda { target, nu: nu(k.nu)? }
        }
        KernelKind::Mallows => KernelFamily::Mallows { nu: nu(k.nu)? },
        KernelKind::Jaccard => KernelFamily::Jaccard { k: k.topk.unwrap_or(1) },
        KernelKind::Rbf => return Err(input_error("synthetic sources produce rankings; the rbf kernel needs scores")),
    };
    Ok(KernelSpec::new(family, n_a)?)
}

fn synthetic_distribution(s: &SourceArgs) -> CliResult<DiscreteDistribution> {
    Ok(match s.source {
        SourceArg::Uniform => uniform_distribution(s.n_alternatives, false)?,
        SourceArg::UniformTies => uniform_distribution(s.n_alternatives, true)?,
        SourceArg::TwoPoint => demo_distribution(),
        SourceArg::PointMass => {
            let r = Ranking::new((0..s.n_alternatives).collect())?;
            explicit_distribution(vec![(Observation::Ranking(r), 1.0)])?
        }
    })
}

fn analyze(a: AnalyzeArgs) -> CliResult<()> {
    check_kernel_flags(&a.kernel)?;
    let c = &a.common;
    let mut schema = StudySchema::load(&a.schema)?;
    if let Some(v) = a.coverage_row {
        schema.coverage_row = v;
    }
    if let Some(v) = a.coverage_col {
        schema.coverage_col = v;
    }
    schema.validate()?;
    let table = load_long_table(&a.input, &schema)?;
    let built = build_configurations(&table, &schema)?;
    let console = Console::for_output(&c.output);
    for ex in &built.excluded {
        console.line(format!("excluded {:?}: {}", ex.key, ex.reason));
    }
    if built.configurations.is_empty() {
        return Err(input_error(format!(
            "{}: no configuration has enough usable conditions",
            a.input.display()
        )));
    }
    let settings = AnalysisSettings {
        alphas: a.alpha_grid.clone().unwrap_or_else(|| vec![c.alpha]),
        deltas: a.delta_grid.clone().unwrap_or_else(|| vec![c.delta]),
        n_rep: c.nrep,
        fit_mode: fit_mode(c.fit),
        mode: sampling_mode(c.mode, SamplingMode::WithoutReplacement),
        seed: c.seed,
    };
    let analysis = analyze_study(&built.configurations, &kernel_request(&a.kernel), &settings)?;
    let format = match c.format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
    };
    write_output(&c.output, |w| write_report(&analysis.reports, format, w))?;

    let acc = &built.accounting;
    console.line(format!(
        "rows: {} total, {} used, {} filtered {:?}",
        acc.total,
        acc.used,
        acc.filtered.values().sum::<usize>(),
        acc.filtered
    ));
    console.line(format!(
        "{:<32} {:>7} {:>7} {:>5} {:>7} {:>14}",
        "configuration", "alpha*", "delta*", "N", "n_hat", "generalizable"
    ));
    for r in &analysis.reports {
        let label = if r.config_key.is_empty() {
            "all".to_string()
        } else {
            r.config_key.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
        };
        console.line(format!(
            "{:<32} {:>7} {:>7} {:>5} {:>7} {:>14}",
            label, r.alpha_star, r.delta_star, r.n, r.n_hat, r.generalizable
        ));
    }
    for f in &analysis.failures {
        console.line(format!("failed {:?}: {}", f.config_key, f.reason));
    }
    if analysis.reports.is_empty() {
        let numeric = analysis.failures.iter().all(|f| f.numeric);
        return Err(CliError {
            code: if numeric { EXIT_NUMERIC } else { EXIT_INPUT },
            message: "every configuration failed".into(),
        });
    }
    Ok(())
}

fn plan(a: PlanArgs) -> CliResult<()> {
    check_kernel_flags(&a.kernel)?;
    let c = &a.common;
    let (mut source, n_a): (Box<dyn ExperimentSource>, usize) = match &a.pool {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            let items: Vec<Observation> = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let n_a = items
                .first()
                .ok_or_else(|| input_error(format!("{}: the pool is empty", path.display())))?
                .n_alternatives();
            (Box::new(PoolSource::new(items)), n_a)
        }
        None => {
            let dist = synthetic_distribution(&a.source)?;
            let n_a = dist.n_alternatives();
            (Box::new(DistributionSource::new(dist, rng::derive_seed(c.seed, 1))?), n_a)
        }
    };
    let spec = synthetic_spec(&a.kernel, n_a)?;
    let req = GenRequirement::new(&spec, c.alpha, c.delta)?;
    let config = WorkflowConfig {
        n0: a.n0,
        max_iterations: a.max_iterations,
        max_n: a.max_n,
        n_rep: c.nrep,
        fit_mode: fit_mode(c.fit),
        mode: sampling_mode(c.mode, SamplingMode::WithoutReplacement),
    };
    let report = run_generalizable_study(source.as_mut(), &spec, &req, &config, c.seed)?;
    match c.format {
        FormatArg::Json => write_json(&c.output, &report)?,
        FormatArg::Csv => write_output(&c.output, |w| report.write_csv(w))?,
    }

    let console = Console::for_output(&c.output);
    console.line(format!("{spec}, alpha* = {}, delta* = {}, eps* = {:.6}", req.alpha_star, req.delta_star, req.eps_star));
    for (i, it) in report.iterations.iter().enumerate() {
        let n_hat = it.n_hat.map_or("-".to_string(), |v| v.to_string());
        console.line(format!("iteration {i}: N = {}, n_hat = {n_hat}", it.n));
    }
    let verdict = match report.stopped_reason {
        StopReason::Converged => format!("generalizable with N = {}", report.final_n()),
        StopReason::SourceExhausted => "not generalizable with available pool".to_string(),
        StopReason::CapReached => "not generalizable within the iteration and size caps".to_string(),
    };
    console.line(verdict);
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    check_kernel_flags(&a.kernel)?;
    let c = &a.common;
    let dist = synthetic_distribution(&a.source)?;
    let spec = synthetic_spec(&a.kernel, dist.n_alternatives())?;
    let config = AccuracyConfig {
        alpha_star: c.alpha,
        delta_star: c.delta,
        n_values: a.n_values.clone(),
        reps: a.reps,
        n_rep: c.nrep,
        fit_mode: fit_mode(c.fit),
        mode: sampling_mode(c.mode, SamplingMode::WithReplacement),
        exact_draws: a.exact_draws,
        exact_n_max: a.exact_n_max,
        min_n: a.min_n,
    };
    let table = estimator_accuracy_experiment(&dist, &spec, &config, c.seed)?;
    match c.format {
        FormatArg::Json => write_json(&c.output, &table)?,
        FormatArg::Csv => write_output(&c.output, |w| table.write_csv(w))?,
    }
    let console = Console::for_output(&c.output);
    console.line(format!("{spec}: true n* = {} at eps* = {:.6}", table.n_star, table.eps_star));
    for &n in &config.n_values {
        let mut r = table.ratios(n);
        let missing = config.reps - r.len();
        r.sort_by(f64::total_cmp);
        let within = r.iter().filter(|&&x| (0.5..=2.0).contains(&x)).count();
        let median = if r.is_empty() { f64::NAN } else { r[r.len() / 2] };
        console.line(format!(
            "N = {n:>4}: median ratio {median:.3}, within [0.5, 2] {within}/{}, missing {missing}",
            r.len()
        ));
    }
    Ok(())
}

fn demo(a: DemoArgs) -> CliResult<()> {
    let c = &a.common;
    let config = DemoConfig {
        reps: a.reps,
        n: a.n,
        n_gen: a.n_gen,
        delta_star: c.delta,
        n_rep: c.nrep,
        significance: a.significance,
    };
    let summary = significance_vs_generalizability_demo(&config, c.seed)?;
    match c.format {
        FormatArg::Json => write_json(&c.output, &summary)?,
        FormatArg::Csv => write_output(&c.output, |w| summary.write_csv(w))?,
    }
    let console = Console::for_output(&c.output);
    console.line(format!(
        "Friedman-significant {:.3}, Conover-Iman-significant {:.3}",
        summary.friedman_fraction, summary.ci_fraction
    ));
    for cell in summary.cells.iter().chain(std::iter::once(&summary.overall)) {
        let ci = cell.ci_significant.map_or("any".to_string(), |b| b.to_string());
        console.line(format!(
            "CI-significant {ci:<5} best {:<8} count {:>5}  {}-generalizability {:.2} ({:.2})",
            cell.best, cell.count, config.n_gen, cell.mean_generalizability, cell.std_generalizability
        ));
    }
    Ok(())
}

fn enumerate(a: EnumerateArgs) -> CliResult<()> {
    let rankings = enumerate_rankings(a.n_alternatives, a.with_ties)?;
    match a.format {
        FormatArg::Json => write_json(&a.output, &rankings)?,
        FormatArg::Csv => write_output(&a.output, |w| {
            let header: Vec<String> = (0..a.n_alternatives).map(|i| format!("a{i}")).collect();
            writeln!(w, "{}", header.join(","))?;
            for r in &rankings {
                let row: Vec<String> = r.ranks().iter().map(|t| t.to_string()).collect();
                writeln!(w, "{}", row.join(","))?;
            }
            Ok(())
        })?,
    }
    Console::for_output(&a.output).line(format!("{} rankings", rankings.len()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(kind: crate::KernelArg) -> KernelArgs {
        KernelArgs {
            kernel: kind,
            nu: None,
            gamma: None,
            topk: None,
            target_alternative: None,
        }
    }

    #[test]
    fn flag_consistency() {
        let mut k = kernel(crate::KernelArg::Mallows);
        assert!(check_kernel_flags(&k).is_ok());
        k.topk = Some(2);
        assert_eq!(check_kernel_flags(&k).unwrap_err().code, EXIT_INPUT);
        let mut k = kernel(crate::KernelArg::Jaccard);
        k.target_alternative = Some("a0".into());
        assert!(check_kernel_flags(&k).is_err());
    }

    #[test]
    fn borda_targets_by_name_or_index() {
        let mut k = kernel(crate::KernelArg::Borda);
        assert!(synthetic_spec(&k, 4).is_err());
        k.target_alternative = Some("a2".into());
        let s = synthetic_spec(&k, 4).unwrap();
        assert_eq!(s.family(), KernelFamily::Borda { target: 2, nu: 0.25 });
        k.target_alternative = Some("3".into());
        assert!(synthetic_spec(&k, 4).is_ok());
        k.target_alternative = Some("a9".into());
        assert!(synthetic_spec(&k, 4).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(Error::Numeric("x".into())).code, EXIT_NUMERIC);
        assert_eq!(CliError::from(Error::Input("x".into())).code, EXIT_INPUT);
    }
}
