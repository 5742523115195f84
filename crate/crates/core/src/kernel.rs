//! Kernels on experimental results.
//!
//! Each kernel formalizes one research question:
//! - Borda: is a target alternative consistently ranked the same?
//! - Jaccard: are the best alternatives consistently the same ones?
//! - Mallows: are the alternatives ranked consistently overall?
//! - RBF: are the raw scores consistent?
//!
//! All four are positive semidefinite with unit diagonal, so `k_sup = 1`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::ranking::{borda_count, discordant_halves, Ranking};

/// One experimental result: a ranking, or the raw score vector it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observation {
    Ranking(Ranking),
    Scores(Vec<f64>),
}

/// Hashable identity of an observation; score vectors compare bitwise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum ObservationKey {
    Ranking(Vec<usize>),
    Scores(Vec<u64>),
}

impl Observation {
    pub fn n_alternatives(&self) -> usize {
        match self {
            Observation::Ranking(r) => r.n_alternatives(),
            Observation::Scores(s) => s.len(),
        }
    }

    pub fn as_ranking(&self) -> Option<&Ranking> {
        match self {
            Observation::Ranking(r) => Some(r),
            Observation::Scores(_) => None,
        }
    }

    pub fn is_ranking(&self) -> bool {
        matches!(self, Observation::Ranking(_))
    }

    pub(crate) fn key(&self) -> ObservationKey {
        match self {
            Observation::Ranking(r) => ObservationKey::Ranking(r.ranks().to_vec()),
            Observation::Scores(s) => ObservationKey::Scores(s.iter().map(|x| x.to_bits()).collect()),
        }
    }

    /// Checks that `self` has the same kind and width as `other`.
    pub(crate) fn check_compatible(&self, other: &Observation) -> Result<()> {
        if self.is_ranking() != other.is_ranking() {
            return Err(Error::input("cannot mix rankings and score vectors in one sample"));
        }
        if self.n_alternatives() != other.n_alternatives() {
            return Err(Error::input(format!(
                "results over {} and {} alternatives cannot be mixed",
                self.n_alternatives(),
                other.n_alternatives()
            )));
        }
        Ok(())
    }
}

impl From<Ranking> for Observation {
    fn from(r: Ranking) -> Self {
        Observation::Ranking(r)
    }
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::Ranking(r) => write!(f, "{r}"),
            Observation::Scores(s) => write!(f, "{s:?}"),
        }
    }
}

/// Kernel family without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Borda,
    Jaccard,
    Mallows,
    Rbf,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Borda => "borda",
            KernelKind::Jaccard => "jaccard",
            KernelKind::Mallows => "mallows",
            KernelKind::Rbf => "rbf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// `exp(-nu * |b1 - b2|)` on the Borda counts of `target`.
    Borda { target: usize, nu: f64 },
    /// Jaccard coefficient of the top-`k` tiers.
    Jaccard { k: usize },
    /// `exp(-nu * n_d)` on the discordant-pair count.
    Mallows { nu: f64 },
    /// `exp(-gamma * |x - y|^2)` on score vectors.
    Rbf { gamma: f64 },
}

/// A kernel family with validated parameters, bound to `n_alternatives`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    n_alternatives: usize,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("{name} must be positive and finite, got {v}")))
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, n_alternatives: usize) -> Result<Self> {
        if n_alternatives == 0 {
            return Err(Error::input("a kernel needs at least one alternative"));
        }
        match family {
            KernelFamily::Borda { target, nu } => {
                positive("nu", nu)?;
                if target >= n_alternatives {
                    return Err(Error::input(format!(
                        "target alternative {target} out of range for {n_alternatives} alternatives"
                    )));
                }
            }
            KernelFamily::Jaccard { k } => {
                if k == 0 || k > n_alternatives {
                    return Err(Error::input(format!(
                        "top-k must be in 1..={n_alternatives}, got {k}"
                    )));
                }
            }
            KernelFamily::Mallows { nu } => positive("nu", nu)?,
            KernelFamily::Rbf { gamma } => positive("gamma", gamma)?,
        }
        Ok(KernelSpec {
            family,
            n_alternatives,
        })
    }

    pub fn borda(n_alternatives: usize, target: usize, nu: f64) -> Result<Self> {
        KernelSpec::new(KernelFamily::Borda { target, nu }, n_alternatives)
    }

    pub fn jaccard(n_alternatives: usize, k: usize) -> Result<Self> {
        KernelSpec::new(KernelFamily::Jaccard { k }, n_alternatives)
    }

    pub fn mallows(n_alternatives: usize, nu: f64) -> Result<Self> {
        KernelSpec::new(KernelFamily::Mallows { nu }, n_alternatives)
    }

    pub fn rbf(n_alternatives: usize, gamma: f64) -> Result<Self> {
        KernelSpec::new(KernelFamily::Rbf { gamma }, n_alternatives)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn kind(&self) -> KernelKind {
        match self.family {
            KernelFamily::Borda { .. } => KernelKind::Borda,
            KernelFamily::Jaccard { .. } => KernelKind::Jaccard,
            KernelFamily::Mallows { .. } => KernelKind::Mallows,
            KernelFamily::Rbf { .. } => KernelKind::Rbf,
        }
    }

    pub fn n_alternatives(&self) -> usize {
        self.n_alternatives
    }

    /// True when the family consumes rankings rather than score vectors.
    pub fn on_rankings(&self) -> bool {
        !matches!(self.family, KernelFamily::Rbf { .. })
    }

    /// Checks that `x` is a result this kernel can evaluate.
    pub fn check(&self, x: &Observation) -> Result<()> {
        if x.is_ranking() != self.on_rankings() {
            return Err(Error::input(format!(
                "{} kernel cannot evaluate {}",
                self.kind(),
                if x.is_ranking() { "a ranking" } else { "a score vector" }
            )));
        }
        if x.n_alternatives() != self.n_alternatives {
            return Err(Error::input(format!(
                "kernel bound to {} alternatives got a result over {}",
                self.n_alternatives,
                x.n_alternatives()
            )));
        }
        Ok(())
    }

    /// Evaluates the kernel on two results.
    pub fn eval(&self, x: &Observation, y: &Observation) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &Observation, y: &Observation) -> f64 {
        match (self.family, x, y) {
            (KernelFamily::Borda { target, nu }, Observation::Ranking(a), Observation::Ranking(b)) => {
                let ba = borda_count(a, target).expect("validated") as f64;
                let bb = borda_count(b, target).expect("validated") as f64;
                (-nu * (ba - bb).abs()).exp()
            }
            (KernelFamily::Jaccard { k }, Observation::Ranking(a), Observation::Ranking(b)) => {
                let (mut inter, mut union) = (0usize, 0usize);
                for (&ra, &rb) in a.ranks().iter().zip(b.ranks()) {
                    let (ia, ib) = (ra < k, rb < k);
                    inter += (ia && ib) as usize;
                    union += (ia || ib) as usize;
                }
                // tier 0 is never empty, so union >= 1
                inter as f64 / union as f64
            }
            (KernelFamily::Mallows { nu }, Observation::Ranking(a), Observation::Ranking(b)) => {
                let n_d = discordant_halves(a.ranks(), b.ranks()) as f64 * 0.5;
                (-nu * n_d).exp()
            }
            (KernelFamily::Rbf { gamma }, Observation::Scores(a), Observation::Scores(b)) => {
                (-gamma * squared_distance(a, b)).exp()
            }
            _ => unreachable!("observation kind checked against the kernel"),
        }
    }

    pub fn bounds(&self) -> KernelBounds {
        kernel_bounds(self)
    }

    /// Similarity threshold δ* mapped to an MMD threshold ε*.
    pub fn epsilon_star(&self, delta_star: f64) -> Result<f64> {
        epsilon_star(self, delta_star)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            KernelFamily::Borda { target, nu } => write!(f, "borda(target={target},nu={nu})"),
            KernelFamily::Jaccard { k } => write!(f, "jaccard(k={k})"),
            KernelFamily::Mallows { nu } => write!(f, "mallows(nu={nu})"),
            KernelFamily::Rbf { gamma } => write!(f, "rbf(gamma={gamma})"),
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Range of kernel values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelBounds {
    pub k_inf: f64,
    pub k_sup: f64,
}

impl KernelBounds {
    /// Upper end of the MMD support, `sqrt(2 (k_sup - k_inf))`.
    pub fn mmd_max(&self) -> f64 {
        (2.0 * (self.k_sup - self.k_inf)).sqrt()
    }
}

pub fn kernel_bounds(spec: &KernelSpec) -> KernelBounds {
    let n_a = spec.n_alternatives as f64;
    let k_inf = match spec.family {
        KernelFamily::Borda { nu, .. } => (-nu * n_a).exp(),
        KernelFamily::Jaccard { .. } | KernelFamily::Rbf { .. } => 0.0,
        KernelFamily::Mallows { nu } => (-nu * n_a * (n_a - 1.0) / 2.0).exp(),
    };
    KernelBounds { k_inf, k_sup: 1.0 }
}

/// Kernel-specific map from the interpretable threshold δ* to the desired
/// average kernel value.
fn similarity_map(kind: KernelKind, delta: f64) -> f64 {
    match kind {
        KernelKind::Jaccard => 1.0 - delta,
        KernelKind::Borda | KernelKind::Mallows | KernelKind::Rbf => (-delta).exp(),
    }
}

/// `ε* = sqrt(2 (k_sup - f(δ*)))`.
pub fn epsilon_star(spec: &KernelSpec, delta_star: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta_star) {
        return Err(Error::input(format!("delta* must lie in [0, 1], got {delta_star}")));
    }
    let k_sup = spec.bounds().k_sup;
    let radicand = 2.0 * (k_sup - similarity_map(spec.kind(), delta_star));
    Ok(radicand.max(0.0).sqrt())
}

/// Recommended parameter for a family over `n_a` alternatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Recommended {
    Value(f64),
    /// γ is chosen from the data with [`median_gamma`].
    MedianHeuristic,
    /// The family's parameter expresses user intent (Jaccard's k).
    UserChoice,
}

pub fn recommended_param(kind: KernelKind, n_a: usize) -> Result<Recommended> {
    match kind {
        KernelKind::Borda => {
            if n_a == 0 {
                return Err(Error::input("Borda kernel needs at least one alternative"));
            }
            Ok(Recommended::Value(1.0 / n_a as f64))
        }
        KernelKind::Mallows => {
            if n_a < 2 {
                return Err(Error::input(format!(
                    "Mallows recommendation needs at least 2 alternatives, got {n_a}"
                )));
            }
            Ok(Recommended::Value(2.0 / (n_a * (n_a - 1)) as f64))
        }
        KernelKind::Rbf => Ok(Recommended::MedianHeuristic),
        KernelKind::Jaccard => Ok(Recommended::UserChoice),
    }
}

/// Median heuristic: `1 / (2 * median squared distance)` over pairs of
/// distinct vectors. Falls back to 1 with a warning when all vectors coincide.
pub fn median_gamma(sample: &[Vec<f64>]) -> f64 {
    let mut d2: Vec<f64> = Vec::new();
    for i in 0..sample.len() {
        for j in (i + 1)..sample.len() {
            let d = squared_distance(&sample[i], &sample[j]);
            if d > 0.0 {
                d2.push(d);
            }
        }
    }
    if d2.is_empty() {
        log::warn!("median heuristic: all score vectors are identical, using gamma = 1");
        return 1.0;
    }
    d2.sort_by(f64::total_cmp);
    let m = d2.len();
    let median = if m % 2 == 1 {
        d2[m / 2]
    } else {
        0.5 * (d2[m / 2 - 1] + d2[m / 2])
    };
    1.0 / (2.0 * median)
}

/// Gram matrix of a sample.
pub fn gram_matrix(spec: &KernelSpec, sample: &[Observation]) -> Result<SymMatrix> {
    if sample.is_empty() {
        return Err(Error::input("Gram matrix of an empty sample"));
    }
    for x in sample {
        sample[0].check_compatible(x)?;
        spec.check(x)?;
    }
    Ok(gram_unchecked(spec, sample))
}

pub(crate) fn gram_unchecked(spec: &KernelSpec, sample: &[Observation]) -> SymMatrix {
    let m = sample.len();
    let mut g = SymMatrix::zeros(m);
    for i in 0..m {
        g.set(i, i, spec.eval_unchecked(&sample[i], &sample[i]));
        for j in (i + 1)..m {
            let v = spec.eval_unchecked(&sample[i], &sample[j]);
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(v: &[usize]) -> Observation {
        Observation::Ranking(Ranking::new(v.to_vec()).unwrap())
    }

    #[test]
    fn worked_example_values() {
        let (r, s) = (obs(&[0, 0, 0]), obs(&[0, 1, 1]));
        let borda = KernelSpec::borda(3, 0, 1.0 / 3.0).unwrap();
        assert_eq!(borda.eval(&r, &s).unwrap(), 1.0);
        let jac = KernelSpec::jaccard(3, 1).unwrap();
        assert!((jac.eval(&r, &s).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let mal = KernelSpec::mallows(3, 1.0 / 3.0).unwrap();
        assert!((mal.eval(&r, &s).unwrap() - (-1.0f64 / 3.0).exp()).abs() < 1e-12);
        let rbf = KernelSpec::rbf(2, 1.0).unwrap();
        let v = Observation::Scores(vec![0.3, -1.2]);
        assert_eq!(rbf.eval(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn type_mismatch_is_rejected() {
        let rbf = KernelSpec::rbf(3, 1.0).unwrap();
        assert!(rbf.eval(&obs(&[0, 1, 2]), &obs(&[0, 1, 2])).is_err());
        let jac = KernelSpec::jaccard(3, 1).unwrap();
        let v = Observation::Scores(vec![1.0, 2.0, 3.0]);
        assert!(jac.eval(&v, &v).is_err());
        assert!(jac.eval(&obs(&[0, 1]), &obs(&[0, 1])).is_err());
    }

    #[test]
    fn invalid_parameters() {
        assert!(KernelSpec::borda(3, 3, 0.1).is_err());
        assert!(KernelSpec::borda(3, 0, 0.0).is_err());
        assert!(KernelSpec::jaccard(3, 0).is_err());
        assert!(KernelSpec::jaccard(3, 4).is_err());
        assert!(KernelSpec::mallows(3, -1.0).is_err());
        assert!(KernelSpec::rbf(3, f64::NAN).is_err());
    }

    #[test]
    fn gram_examples() {
        let mal = KernelSpec::mallows(3, 1.0 / 3.0).unwrap();
        let g = gram_matrix(&mal, &[obs(&[0, 1, 2])]).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
        let sample = [obs(&[0, 1, 2]), obs(&[2, 0, 1]), obs(&[1, 2, 0])];
        let g = gram_matrix(&mal, &sample).unwrap();
        let eig = g.eigenvalues().unwrap();
        assert!(eig.iter().all(|&e| e >= -1e-8), "{eig:?}");
        let dup = [obs(&[0, 1, 2]), obs(&[0, 1, 2]), obs(&[1, 0, 2])];
        let g = gram_matrix(&mal, &dup).unwrap();
        assert_eq!(g.row(0), g.row(1));
        assert!(gram_matrix(&mal, &[]).is_err());
        let mixed = [obs(&[0, 1, 2]), Observation::Scores(vec![0.0; 3])];
        assert!(gram_matrix(&mal, &mixed).is_err());
    }

    #[test]
    fn recommended() {
        assert_eq!(recommended_param(KernelKind::Borda, 3).unwrap(), Recommended::Value(1.0 / 3.0));
        match recommended_param(KernelKind::Mallows, 3).unwrap() {
            Recommended::Value(v) => assert!((v - 1.0 / 3.0).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert_eq!(recommended_param(KernelKind::Mallows, 5).unwrap(), Recommended::Value(0.1));
        assert!(recommended_param(KernelKind::Mallows, 1).is_err());
        assert_eq!(recommended_param(KernelKind::Rbf, 4).unwrap(), Recommended::MedianHeuristic);
        assert_eq!(recommended_param(KernelKind::Jaccard, 4).unwrap(), Recommended::UserChoice);
    }

    #[test]
    fn median_gamma_examples() {
        assert_eq!(median_gamma(&[vec![0.0], vec![1.0]]), 0.5);
        assert!((median_gamma(&[vec![0.0, 0.0], vec![3.0, 4.0]]) - 0.02).abs() < 1e-15);
        assert_eq!(median_gamma(&[vec![1.0, 2.0], vec![1.0, 2.0]]), 1.0);

        let pts: [Vec<f64>; 4] = [vec![0.1, 0.7], vec![-0.3, 0.2], vec![1.5, -0.4], vec![0.9, 0.9]];
        let mut d: Vec<f64> = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                d.push((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2));
            }
        }
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let brute = 1.0 / (d[2] + d[3]);
        assert!((median_gamma(&pts) - brute).abs() < 1e-12);
    }

    #[test]
    fn bounds_examples() {
        let b = kernel_bounds(&KernelSpec::borda(3, 0, 1.0 / 3.0).unwrap());
        assert!((b.k_inf - (-1.0f64).exp()).abs() < 1e-15);
        let j = kernel_bounds(&KernelSpec::jaccard(4, 2).unwrap());
        assert_eq!((j.k_inf, j.k_sup), (0.0, 1.0));
        let m = kernel_bounds(&KernelSpec::mallows(5, 0.1).unwrap());
        assert!((m.k_inf - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn epsilon_star_examples() {
        let jac = KernelSpec::jaccard(3, 1).unwrap();
        assert!((jac.epsilon_star(0.05).unwrap() - 0.1f64.sqrt()).abs() < 1e-12);
        assert_eq!(jac.epsilon_star(0.0).unwrap(), 0.0);
        let borda = KernelSpec::borda(3, 0, 1.0 / 3.0).unwrap();
        let e = borda.epsilon_star(1.0 / 3.0).unwrap();
        assert!((e - (2.0 * (1.0 - (-1.0f64 / 3.0).exp())).sqrt()).abs() < 1e-12);
        assert!((e - 0.753).abs() < 1e-3);
        assert!(jac.epsilon_star(1.5).is_err());
        assert!(jac.epsilon_star(-0.1).is_err());
        let mal = KernelSpec::mallows(4, 1.0 / 6.0).unwrap();
        let mut prev = 0.0;
        for i in 0..=20 {
            let e = mal.epsilon_star(i as f64 / 20.0).unwrap();
            assert!(e >= prev);
            prev = e;
        }
    }
}
