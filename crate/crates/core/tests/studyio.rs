use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use genrank::kernel::KernelKind;
use genrank::studyio::{
    analyze_study, build_configurations, emit_report, load_long_table, read_report, AnalysisSettings,
    FactorRole, KernelRequest, MissingPolicy, ReportFormat, StudyConfigurations, StudySchema,
    REASON_ALTERNATIVE_COVERAGE, REASON_DROPPED_CONDITION, REASON_EXCLUDED_CONFIGURATION,
};
use genrank::{FitMode, SamplingMode};

fn schema(policy: MissingPolicy) -> StudySchema {
    StudySchema {
        alternative_column: "model".into(),
        score_column: "score".into(),
        factor_roles: BTreeMap::from([
            ("task".to_string(), FactorRole::Design),
            ("dataset".to_string(), FactorRole::Generalizability),
        ]),
        higher_is_better: true,
        tie_tol: 0.0,
        missing_policy: policy,
        coverage_row: 0.8,
        coverage_col: 0.8,
        aggregation: Default::default(),
    }
}

fn write_csv(dir: &Path, name: &str, rows: &[String]) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "model,task,dataset,score").unwrap();
    for r in rows {
        writeln!(f, "{r}").unwrap();
    }
    path
}

fn build(rows: &[String], schema: &StudySchema) -> StudyConfigurations {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(dir.path(), "t.csv", rows);
    build_configurations(&load_long_table(&path, schema).unwrap(), schema).unwrap()
}

/// `n_models` models on `n_data` datasets of one task, model i scoring
/// `10 - i + dataset noise`; cells in `skip` are left out.
fn grid(task: &str, n_models: usize, n_data: usize, skip: &[(usize, usize)]) -> Vec<String> {
    let mut rows = Vec::new();
    for d in 0..n_data {
        for m in 0..n_models {
            if !skip.contains(&(m, d)) {
                let score = 10.0 - m as f64 + 0.3 * ((m * 7 + d * 3) % 5) as f64;
                rows.push(format!("m{m},{task},d{d},{score}"));
            }
        }
    }
    rows
}

#[test]
fn missing_alternative_takes_worst_tier() {
    let rows = grid("t", 4, 5, &[(1, 2)]);
    let s = StudySchema {
        coverage_row: 0.75,
        ..schema(MissingPolicy::ImputeWorstRank)
    };
    let configs = build(&rows, &s);
    let c = &configs.configurations[0];
    assert_eq!(c.imputed_conditions, 1);
    let last = c.sample.results()[2].as_ranking().unwrap();
    let worst = last.max_tier();
    assert_eq!(last.rank(1), worst);
    assert!((0..4).filter(|&a| a != 1).all(|a| last.rank(a) < worst));
    assert!(configs.accounting.reconciles());
}

#[test]
fn drop_condition_policy() {
    let rows = grid("t", 4, 5, &[(1, 2)]);
    let s = StudySchema {
        coverage_row: 0.75,
        ..schema(MissingPolicy::DropCondition)
    };
    let configs = build(&rows, &s);
    let c = &configs.configurations[0];
    assert_eq!(c.sample.len(), 4);
    assert!(!c.conditions.contains(&"d2".to_string()));
    assert_eq!(configs.accounting.filtered[REASON_DROPPED_CONDITION], 3);
    assert!(configs.accounting.reconciles());
}

#[test]
fn sparse_alternative_is_dropped() {
    // m5 misses 3 of 10 datasets: 70% coverage < 0.8
    let rows = grid("t", 6, 10, &[(5, 0), (5, 4), (5, 8)]);
    let configs = build(&rows, &schema(MissingPolicy::ImputeWorstRank));
    let c = &configs.configurations[0];
    assert_eq!(c.sample.len(), 10);
    assert_eq!(c.sample.n_alternatives(), 5);
    assert!(c.sample.alternatives().index_of("m5").is_none());
    assert_eq!(c.imputed_conditions, 0);
    assert_eq!(configs.accounting.filtered[REASON_ALTERNATIVE_COVERAGE], 7);
    assert!(configs.accounting.reconciles());
}

#[test]
fn single_condition_configuration_is_excluded() {
    let mut rows = grid("big", 3, 4, &[]);
    rows.extend(grid("small", 3, 1, &[]));
    let configs = build(&rows, &schema(MissingPolicy::ImputeWorstRank));
    assert_eq!(configs.configurations.len(), 1);
    assert_eq!(configs.excluded.len(), 1);
    assert_eq!(configs.excluded[0].key["task"], "small");
    assert_eq!(configs.accounting.filtered[REASON_EXCLUDED_CONFIGURATION], 3);
}

#[test]
fn row_order_does_not_matter() {
    let rows = grid("t", 4, 6, &[(2, 1)]);
    let mut shuffled = rows.clone();
    shuffled.reverse();
    shuffled.swap(0, 7);
    let s = schema(MissingPolicy::ImputeWorstRank);
    let (a, b) = (build(&rows, &s), build(&shuffled, &s));
    let rankings = |c: &StudyConfigurations| {
        let c = &c.configurations[0];
        let mut v: Vec<(String, Vec<usize>)> = c
            .conditions
            .iter()
            .cloned()
            .zip(c.sample.results().iter().map(|x| x.as_ranking().unwrap().ranks().to_vec()))
            .collect();
        v.sort();
        v
    };
    assert_eq!(rankings(&a), rankings(&b));
    assert_eq!(a.accounting, b.accounting);
}

fn settings(alphas: Vec<f64>) -> AnalysisSettings {
    AnalysisSettings {
        alphas,
        deltas: vec![0.05],
        n_rep: 100,
        fit_mode: FitMode::Free,
        mode: SamplingMode::WithoutReplacement,
        seed: 4,
    }
}

#[test]
fn constant_configuration_needs_fewer_experiments() {
    // task "same": identical scores everywhere; task "mixed": U_3-like cycling
    let mut rows = Vec::new();
    for d in 0..24 {
        for m in 0..3 {
            rows.push(format!("m{m},same,d{d},{}", 3 - m));
            rows.push(format!("m{m},mixed,d{d},{}", (m + d) % 3));
        }
    }
    let configs = build(&rows, &schema(MissingPolicy::ImputeWorstRank));
    let analysis = analyze_study(
        &configs.configurations,
        &KernelRequest::new(KernelKind::Mallows),
        &settings(vec![0.9]),
    )
    .unwrap();
    assert!(analysis.failures.is_empty(), "{:?}", analysis.failures);
    let n_hat = |task: &str| analysis.reports.iter().find(|r| r.config_key["task"] == task).unwrap().n_hat;
    assert_eq!(n_hat("same"), 1);
    assert!(n_hat("mixed") > 1);
}

#[test]
fn reports_round_trip_in_both_formats() {
    let rows = grid("t", 4, 16, &[]);
    let configs = build(&rows, &schema(MissingPolicy::ImputeWorstRank));
    let alphas = vec![0.7, 0.8, 0.9, 0.95, 0.99];
    let analysis = analyze_study(
        &configs.configurations,
        &KernelRequest::new(KernelKind::Jaccard),
        &settings(alphas.clone()),
    )
    .unwrap();
    assert_eq!(analysis.reports.len(), alphas.len());
    for w in analysis.reports.windows(2) {
        assert!(w[1].n_hat + 1 >= w[0].n_hat);
    }

    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("r.json", ReportFormat::Json), ("r.csv", ReportFormat::Csv)] {
        let path = dir.path().join(name);
        emit_report(&analysis.reports, format, &path).unwrap();
        assert_eq!(read_report(&path, format).unwrap(), analysis.reports, "{name}");
        let one = dir.path().join(format!("one.{name}"));
        emit_report(&analysis.reports[..1], format, &one).unwrap();
        assert_eq!(read_report(&one, format).unwrap(), analysis.reports[..1]);
        let empty = dir.path().join(format!("empty.{name}"));
        emit_report(&[], format, &empty).unwrap();
        assert!(read_report(&empty, format).unwrap().is_empty());
    }
}
