//! Rankings with ties.
//!
//! A ranking is a totally ordered partition of the alternatives into tiers.
//! It is stored as one tier index per alternative, tier 0 being the best, and
//! the tier indices always form the contiguous range `0..=t_max`.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Ranking {
    ranks: Vec<usize>,
}

impl Ranking {
    /// Builds a ranking from tier indices, rejecting empty input and gaps.
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::input("a ranking needs at least one alternative"));
        }
        let max = *ranks.iter().max().expect("non-empty");
        let mut seen = vec![false; max + 1];
        for &r in &ranks {
            seen[r] = true;
        }
        if let Some(gap) = seen.iter().position(|s| !s) {
            return Err(Error::input(format!(
                "tier {gap} is empty in ranking {ranks:?}"
            )));
        }
        Ok(Ranking { ranks })
    }

    /// Renumbers arbitrary ordinal labels into contiguous tiers, keeping
    /// their order (`[3, 7, 3]` becomes `[0, 1, 0]`).
    pub fn from_ordinals(labels: &[usize]) -> Result<Self> {
        let mut distinct: Vec<usize> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let ranks = labels
            .iter()
            .map(|l| distinct.binary_search(l).expect("present"))
            .collect();
        Ranking::new(ranks)
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn n_alternatives(&self) -> usize {
        self.ranks.len()
    }

    /// Tier of alternative `a`.
    pub fn rank(&self, a: usize) -> usize {
        self.ranks[a]
    }

    /// Index of the worst tier.
    pub fn max_tier(&self) -> usize {
        *self.ranks.iter().max().expect("non-empty")
    }

    pub fn n_tiers(&self) -> usize {
        self.max_tier() + 1
    }
}

impl TryFrom<Vec<usize>> for Ranking {
    type Error = Error;

    fn try_from(ranks: Vec<usize>) -> Result<Self> {
        Ranking::new(ranks)
    }
}

impl From<Ranking> for Vec<usize> {
    fn from(r: Ranking) -> Self {
        r.ranks
    }
}

impl fmt::Display for Ranking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, r) in self.ranks.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, ")")
    }
}

/// Named alternatives compared in a study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlternativeSet {
    names: Vec<String>,
}

impl AlternativeSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::input("an alternative set cannot be empty"));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::input(format!("duplicate alternative name {n:?}")));
            }
        }
        Ok(AlternativeSet { names })
    }

    /// Alternatives named `a0, a1, ...`.
    pub fn indexed(n_a: usize) -> Result<Self> {
        AlternativeSet::new((0..n_a).map(|i| format!("a{i}")).collect())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Ranks alternatives by score.
///
/// Scores are sorted (descending when `higher_is_better`) and consecutive
/// sorted scores whose gap is at most `tie_tol` share a tier, so ties chain:
/// with tolerance 0.06 the scores 1.0, 0.95, 0.90 form a single tier.
pub fn ranking_from_scores(scores: &[f64], higher_is_better: bool, tie_tol: f64) -> Result<Ranking> {
    if scores.is_empty() {
        return Err(Error::input("cannot rank an empty score vector"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::input(format!(
            "score of alternative {i} is not finite ({})",
            scores[i]
        )));
    }
    if !(tie_tol >= 0.0 && tie_tol.is_finite()) {
        return Err(Error::input(format!("tie tolerance must be finite and >= 0, got {tie_tol}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (scores[a], scores[b]);
        if higher_is_better {
            y.total_cmp(&x)
        } else {
            x.total_cmp(&y)
        }
    });
    let mut ranks = vec![0; scores.len()];
    let mut tier = 0;
    for w in 1..order.len() {
        let gap = (scores[order[w]] - scores[order[w - 1]]).abs();
        if gap > tie_tol {
            tier += 1;
        }
        ranks[order[w]] = tier;
    }
    Ranking::new(ranks)
}

fn check_alternative(r: &Ranking, a: usize) -> Result<()> {
    if a >= r.n_alternatives() {
        return Err(Error::input(format!(
            "alternative index {a} out of range for {} alternatives",
            r.n_alternatives()
        )));
    }
    Ok(())
}

/// Number of alternatives weakly dominated by `target`, itself included.
pub fn borda_count(r: &Ranking, target: usize) -> Result<usize> {
    check_alternative(r, target)?;
    let t = r.rank(target);
    Ok(r.ranks.iter().filter(|&&x| x >= t).count())
}

/// Alternatives in the `k` best tiers, in index order.
pub fn top_k_tiers(r: &Ranking, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    Ok(r
        .ranks
        .iter()
        .enumerate()
        .filter(|(_, &t)| t < k)
        .map(|(a, _)| a)
        .collect())
}

/// Discordant pairs between two rankings.
///
/// Each unordered pair counts 1 when strictly reversed and 0.5 when tied in
/// exactly one of the rankings, so the value lies in `[0, C(n_a, 2)]`.
pub fn discordant_pairs(r1: &Ranking, r2: &Ranking) -> Result<f64> {
    let n = r1.n_alternatives();
    if n != r2.n_alternatives() {
        return Err(Error::input(format!(
            "rankings over {} and {} alternatives cannot be compared",
            n,
            r2.n_alternatives()
        )));
    }
    Ok(discordant_halves(&r1.ranks, &r2.ranks) as f64 * 0.5)
}

/// Twice the discordant-pair count, as an integer.
pub(crate) fn discordant_halves(a: &[usize], b: &[usize]) -> u64 {
    let mut halves = 0u64;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let s1 = a[i].cmp(&a[j]) as i8;
            let s2 = b[i].cmp(&b[j]) as i8;
            halves += (s1 - s2).unsigned_abs() as u64;
        }
    }
    halves
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(v: &[usize]) -> Ranking {
        Ranking::new(v.to_vec()).unwrap()
    }

    /// Every gap-free tier vector over `n` alternatives.
    fn all_rankings(n: usize) -> Vec<Ranking> {
        let mut out = Vec::new();
        let total = n.pow(n as u32);
        for mut code in 0..total {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(code % n);
                code /= n;
            }
            if let Ok(rk) = Ranking::new(v) {
                out.push(rk);
            }
        }
        out
    }

    /// Groups sorted scores by scanning gaps, written independently of the
    /// implementation: each score's tier is the number of gaps above `tol`
    /// between it and the best score.
    fn chained_oracle(scores: &[f64], tol: f64) -> Vec<usize> {
        let mut sorted: Vec<f64> = scores.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        scores
            .iter()
            .map(|s| {
                let pos = sorted.iter().position(|x| x == s).unwrap();
                sorted[..=pos].windows(2).filter(|w| w[0] - w[1] > tol).count()
            })
            .collect()
    }

    #[test]
    fn rejects_gaps_and_empty() {
        assert!(Ranking::new(vec![]).is_err());
        assert!(Ranking::new(vec![0, 2]).is_err());
        assert!(Ranking::new(vec![1, 1]).is_err());
        assert_eq!(Ranking::from_ordinals(&[3, 7, 3]).unwrap().ranks(), &[0, 1, 0]);
    }

    #[test]
    fn from_scores_examples() {
        assert_eq!(ranking_from_scores(&[0.9, 0.9, 0.3], true, 0.0).unwrap().ranks(), &[0, 0, 1]);
        assert_eq!(ranking_from_scores(&[1.0, 0.95, 0.90], true, 0.06).unwrap().ranks(), &[0, 0, 0]);
        assert_eq!(
            chained_oracle(&[1.0, 0.95, 0.90], 0.06),
            vec![0, 0, 0]
        );
        assert_eq!(ranking_from_scores(&[1.0, 0.0, 1.0], true, 0.0).unwrap().ranks(), &[0, 1, 0]);
        assert_eq!(ranking_from_scores(&[0.2, 0.1, 0.3], false, 0.0).unwrap().ranks(), &[1, 0, 2]);
        assert!(ranking_from_scores(&[1.0, f64::NAN], true, 0.0).is_err());
        assert!(ranking_from_scores(&[1.0, f64::INFINITY], true, 0.0).is_err());
        assert!(ranking_from_scores(&[], true, 0.0).is_err());
    }

    #[test]
    fn from_scores_matches_chained_oracle() {
        let cases: [(&[f64], f64); 4] = [
            (&[0.5, 0.52, 0.7, 0.71, 0.1], 0.02),
            (&[3.0, 2.0, 1.0, 0.0], 1.0),
            (&[3.0, 2.0, 1.0, 0.0], 0.999),
            (&[0.4, 0.1, 0.25, 0.3, 0.05, 0.4], 0.06),
        ];
        for (scores, tol) in cases {
            let got = ranking_from_scores(scores, true, tol).unwrap();
            assert_eq!(got.ranks(), chained_oracle(scores, tol).as_slice(), "{scores:?} tol {tol}");
        }
    }

    #[test]
    fn distinct_scores_give_permutation() {
        let rk = ranking_from_scores(&[0.3, 0.9, 0.1, 0.5], true, 0.0).unwrap();
        assert_eq!(rk.max_tier(), 3);
        assert_eq!(rk.ranks(), &[2, 0, 3, 1]);
    }

    #[test]
    fn borda_examples() {
        assert_eq!(borda_count(&r(&[0, 0, 0]), 0).unwrap(), 3);
        assert_eq!(borda_count(&r(&[0, 1, 1]), 0).unwrap(), 3);
        assert_eq!(borda_count(&r(&[0, 1, 1]), 1).unwrap(), 2);
        assert!(borda_count(&r(&[0, 1, 1]), 3).is_err());
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_tiers(&r(&[0, 1, 1]), 1).unwrap(), vec![0]);
        assert_eq!(top_k_tiers(&r(&[0, 0, 0]), 1).unwrap(), vec![0, 1, 2]);
        let x = r(&[2, 0, 1, 1]);
        assert_eq!(top_k_tiers(&x, x.n_tiers()).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(top_k_tiers(&x, 10).unwrap(), vec![0, 1, 2, 3]);
        assert!(top_k_tiers(&x, 0).is_err());
    }

    #[test]
    fn discordant_examples() {
        let a = r(&[0, 2, 1]);
        assert_eq!(discordant_pairs(&a, &a).unwrap(), 0.0);
        assert_eq!(discordant_pairs(&r(&[0, 1]), &r(&[1, 0])).unwrap(), 1.0);
        assert_eq!(discordant_pairs(&r(&[0, 0, 0]), &r(&[0, 1, 1])).unwrap(), 1.0);
        assert!(discordant_pairs(&r(&[0, 1]), &r(&[0, 1, 2])).is_err());
    }

    #[test]
    fn single_alternative() {
        let x = r(&[0]);
        assert_eq!(borda_count(&x, 0).unwrap(), 1);
        assert_eq!(discordant_pairs(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn discordant_is_metric_exhaustively() {
        for n in 1..=4 {
            let all = all_rankings(n);
            let max = (n * (n - 1) / 2) as f64;
            for a in &all {
                for b in &all {
                    let ab = discordant_pairs(a, b).unwrap();
                    assert_eq!(ab, discordant_pairs(b, a).unwrap());
                    assert!((0.0..=max).contains(&ab));
                    assert_eq!(ab == 0.0, a == b);
                    for c in &all {
                        let ac = discordant_pairs(a, c).unwrap();
                        let cb = discordant_pairs(c, b).unwrap();
                        assert!(ab <= ac + cb + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn borda_and_top_k_order_properties() {
        for n in 1..=4 {
            for x in all_rankings(n) {
                for a in 0..n {
                    for b in 0..n {
                        let ba = borda_count(&x, a).unwrap();
                        let bb = borda_count(&x, b).unwrap();
                        assert_eq!(ba >= bb, x.rank(a) <= x.rank(b));
                        assert!((1..=n).contains(&ba));
                    }
                }
                for k in 1..=n {
                    let small = top_k_tiers(&x, k).unwrap();
                    let big = top_k_tiers(&x, k + 1).unwrap();
                    assert!(small.iter().all(|a| big.contains(a)));
                }
            }
        }
    }

    #[test]
    fn serde_rejects_gapped_ranks() {
        let ok: Ranking = serde_json::from_str("[0,1,0]").unwrap();
        assert_eq!(ok.ranks(), &[0, 1, 0]);
        assert!(serde_json::from_str::<Ranking>("[0,2]").is_err());
    }
}
