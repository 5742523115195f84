use genrank::kernel::gram_matrix;
use genrank::linalg::SymMatrix;
use genrank::powerlaw::{
    centered_kernel_eigenvalues, chi2_moment_match, closed_form_quantile, lin_inverse_normal, predict_n_star,
    FitMode, PowerLawFit,
};
use genrank::synthetic::uniform_distribution;
use genrank::{rng, KernelSpec};
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[test]
fn matched_law_has_the_moments_of_q() {
    let lambdas = [0.5, 0.3, 0.15, 0.05];
    let m = chi2_moment_match(&lambdas).unwrap();
    let mut rng = rng::stream(21, 0);
    let draws = 1_000_000;
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        let q: f64 = 2.0 * lambdas.iter().map(|l| l * standard_normal(&mut rng).powi(2)).sum::<f64>();
        s1 += q;
        s2 += q * q;
    }
    let (e1, e2) = (s1 / draws as f64, s2 / draws as f64);
    // a·χ²(d): mean a·d, second moment a²(2d + d²)
    let mean = m.a * m.dof;
    let second = m.a * m.a * (2.0 * m.dof + m.dof * m.dof);
    assert!((e1 / mean - 1.0).abs() < 0.01, "{e1} vs {mean}");
    assert!((e2 / second - 1.0).abs() < 0.01, "{e2} vs {second}");
    assert!((second - 4.0 * m.lambda2).abs() < 1e-12);
}

#[test]
fn lin_inverse_against_normal_quantile() {
    let normal = Normal::standard();
    for (alpha, tol) in [(0.95, 0.0015), (0.975, 0.01), (0.6, 0.02)] {
        let lin = lin_inverse_normal(alpha).unwrap();
        let exact = normal.inverse_cdf(alpha);
        assert!((lin - exact).abs() < tol, "alpha={alpha}: {lin} vs {exact}");
    }
    assert!(lin_inverse_normal(0.5).is_err());
}

fn permuted(k: &SymMatrix, perm: &[usize]) -> SymMatrix {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| perm.iter().map(|&j| k.get(i, j)).collect()).collect();
    SymMatrix::from_rows(&rows).unwrap()
}

#[test]
fn eigenvalues_ignore_support_order() {
    let d = uniform_distribution(3, true).unwrap();
    let spec = KernelSpec::mallows(3, 0.4).unwrap();
    let k = gram_matrix(&spec, d.support()).unwrap();
    let mut rng = rng::stream(22, 0);
    let p: Vec<f64> = {
        let w: Vec<f64> = (0..k.size()).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    };
    let base = centered_kernel_eigenvalues(&k, &p).unwrap();
    assert!(base.iter().sum::<f64>() >= 0.0);
    assert!(base.windows(2).all(|w| w[0] >= w[1]));
    let mut perm: Vec<usize> = (0..k.size()).collect();
    for round in 0..5 {
        perm.rotate_left(round + 1);
        perm.swap(0, round + 2);
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let other = centered_kernel_eigenvalues(&permuted(&k, &perm), &pp).unwrap();
        for (a, b) in base.iter().zip(&other) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn closed_form_on_uniform_permutations_is_finite_and_scales() {
    let d = uniform_distribution(4, false).unwrap();
    let spec = KernelSpec::jaccard(4, 2).unwrap();
    let q8 = closed_form_quantile(&d, &spec, 8, 0.95).unwrap();
    let q32 = closed_form_quantile(&d, &spec, 32, 0.95).unwrap();
    assert!(q8.is_finite() && q8 > 0.0);
    assert!((q32 / q8 - 0.5).abs() < 1e-12);
    assert!(closed_form_quantile(&d, &spec, 8, 0.9).unwrap() < q8);
}

proptest! {
    #[test]
    fn prediction_is_monotone_in_epsilon(beta0 in -3.0f64..5.0, beta1 in -4.0f64..-0.5, e1 in 0.01f64..1.4, e2 in 0.01f64..1.4) {
        let fit = PowerLawFit { beta0, beta1, mode: FitMode::Free, residual: 0.0 };
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(predict_n_star(&fit, lo).unwrap() >= predict_n_star(&fit, hi).unwrap());
    }
}
