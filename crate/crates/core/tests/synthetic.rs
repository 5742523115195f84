use std::collections::{BTreeMap, BTreeSet};

use genrank::sigtest::demo_distribution;
use genrank::synthetic::{
    enumerate_rankings, estimator_accuracy_experiment, explicit_distribution, sample_from, uniform_distribution,
    AccuracyConfig,
};
use genrank::{KernelSpec, Observation, Ranking};

/// Every vector in `{0..n-1}^n` whose used tiers are exactly `0..m`.
fn brute_force(n: usize, with_ties: bool) -> BTreeSet<Vec<usize>> {
    let mut out = BTreeSet::new();
    let mut v = vec![0usize; n];
    loop {
        let used: BTreeSet<usize> = v.iter().copied().collect();
        if used.iter().copied().eq(0..used.len()) && (with_ties || used.len() == n) {
            out.insert(v.clone());
        }
        let mut i = 0;
        while i < n && v[i] == n - 1 {
            v[i] = 0;
            i += 1;
        }
        if i == n {
            return out;
        }
        v[i] += 1;
    }
}

#[test]
fn enumeration_matches_brute_force() {
    for n in 1..=5 {
        for with_ties in [false, true] {
            let listed: Vec<Vec<usize>> = enumerate_rankings(n, with_ties)
                .unwrap()
                .iter()
                .map(|r| r.ranks().to_vec())
                .collect();
            let set: BTreeSet<_> = listed.iter().cloned().collect();
            assert_eq!(set.len(), listed.len(), "duplicates at n_a={n}");
            assert_eq!(set, brute_force(n, with_ties), "n_a={n}, ties={with_ties}");
        }
    }
    let counts: Vec<usize> = (1..=5).map(|n| enumerate_rankings(n, true).unwrap().len()).collect();
    assert_eq!(counts, [1, 3, 13, 75, 541]);
}

#[test]
fn uniform_with_ties() {
    let d = uniform_distribution(3, true).unwrap();
    assert_eq!(d.len(), 13);
    assert!(d.probs().iter().all(|&p| (p - 1.0 / 13.0).abs() < 1e-15));
}

fn frequencies(sample: &[Observation]) -> BTreeMap<Vec<usize>, f64> {
    let mut f = BTreeMap::new();
    for x in sample {
        *f.entry(x.as_ranking().unwrap().ranks().to_vec()).or_insert(0.0) += 1.0 / sample.len() as f64;
    }
    f
}

#[test]
fn sampling_converges_to_probabilities() {
    let two_point = demo_distribution();
    assert_eq!(two_point.len(), 2);
    let f = frequencies(sample_from(&two_point, 100_000, 11).unwrap().results());
    assert!((f[&vec![0, 1, 2, 3, 4]] - 0.55).abs() < 0.01);

    let ties = uniform_distribution(3, true).unwrap();
    let f = frequencies(sample_from(&ties, 100_000, 12).unwrap().results());
    assert_eq!(f.len(), 13);
    for (x, p) in ties.support().iter().zip(ties.probs()) {
        let got = f[&x.as_ranking().unwrap().ranks().to_vec()];
        assert!((got - p).abs() < 0.01, "{x:?}: {got} vs {p}");
    }
}

#[test]
fn sampling_is_reproducible() {
    let d = uniform_distribution(4, false).unwrap();
    assert_eq!(sample_from(&d, 50, 3).unwrap(), sample_from(&d, 50, 3).unwrap());
    assert_ne!(sample_from(&d, 50, 3).unwrap(), sample_from(&d, 50, 4).unwrap());
}

#[test]
fn duplicate_support_rejected() {
    let r = || Observation::Ranking(Ranking::new(vec![0, 1]).unwrap());
    assert!(explicit_distribution(vec![(r(), 0.5), (r(), 0.5)]).is_err());
}

#[test]
fn point_mass_accuracy_is_exact() {
    let d = explicit_distribution(vec![(Observation::Ranking(Ranking::new(vec![1, 0, 2]).unwrap()), 1.0)]).unwrap();
    let config = AccuracyConfig {
        reps: 5,
        ..AccuracyConfig::default()
    };
    let table = estimator_accuracy_experiment(&d, &KernelSpec::mallows(3, 1.0 / 3.0).unwrap(), &config, 1).unwrap();
    assert_eq!(table.n_star, 1);
    assert_eq!(table.rows.len(), 5 * config.n_values.len());
    assert!(table.rows.iter().all(|r| r.ratio == Some(1.0)));
}

#[test]
fn accuracy_table_shape_and_determinism() {
    let d = uniform_distribution(4, false).unwrap();
    let spec = KernelSpec::mallows(4, 1.0 / 6.0).unwrap();
    let config = AccuracyConfig {
        n_values: vec![10, 20],
        reps: 10,
        ..AccuracyConfig::default()
    };
    let a = estimator_accuracy_experiment(&d, &spec, &config, 5).unwrap();
    assert_eq!(a.rows.len(), 20);
    assert_eq!(a, estimator_accuracy_experiment(&d, &spec, &config, 5).unwrap());
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 21);
}
