//! Leave-one-out ranking evaluation: HR@N and NDCG@N over one held-out
//! positive plus 99 sampled negatives per user, with a popularity baseline.

use rayon::prelude::*;

use crate::encoder::FusedEmbeddings;
use crate::error::{Result, SminError};
use crate::graph::split::EvalCase;
use crate::graph::HeteroGraph;

pub trait Scorer: Sync {
    fn score(&self, user: usize, item: usize) -> f64;
}

pub struct EmbeddingScorer<'a> {
    pub fused: &'a FusedEmbeddings,
}

impl Scorer for EmbeddingScorer<'_> {
    fn score(&self, user: usize, item: usize) -> f64 {
        self.fused
            .users
            .row(user)
            .iter()
            .zip(self.fused.items.row(item))
            .map(|(&a, &b)| a * b)
            .sum()
    }
}

/// Scores every item by its train interaction count (user-independent).
pub struct PopularityScorer {
    counts: Vec<usize>,
}

impl Scorer for PopularityScorer {
    fn score(&self, _user: usize, item: usize) -> f64 {
        self.counts[item] as f64
    }
}

pub fn popularity_baseline(train: &HeteroGraph) -> PopularityScorer {
    let mut counts = vec![0usize; train.item_count];
    for (_, v, _) in train.interactions.iter() {
        counts[v] += 1;
    }
    PopularityScorer { counts }
}

/// Rank of the held-out positive among its 100 candidates (1-based), with
/// deterministic tie-breaking by item id.
#[derive(Clone, Debug)]
pub struct RankResult {
    pub user: usize,
    pub positive: usize,
    pub rank: usize,
    /// (item, score) for the positive followed by the negatives, case order.
    pub scores: Vec<(usize, f64)>,
}

pub fn rank_case(case: &EvalCase, scorer: &impl Scorer) -> RankResult {
    let pos_score = scorer.score(case.user, case.positive);
    let mut scores = Vec::with_capacity(case.negatives.len() + 1);
    scores.push((case.positive, pos_score));
    let mut rank = 1;
    for &neg in &case.negatives {
        let s = scorer.score(case.user, neg);
        scores.push((neg, s));
        if s > pos_score || (s == pos_score && neg < case.positive) {
            rank += 1;
        }
    }
    RankResult {
        user: case.user,
        positive: case.positive,
        rank,
        scores,
    }
}

/// Fraction of cases whose positive ranks within the top n.
pub fn hr_at_n(results: &[RankResult], n: usize) -> Result<f64> {
    if n < 1 {
        return Err(SminError::Domain(format!("HR cutoff must be >= 1, got {n}")));
    }
    if results.is_empty() {
        return Err(SminError::Domain("no rank results".into()));
    }
    let hits = results.iter().filter(|r| r.rank <= n).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Mean of 1/log2(rank+1) for hits within the cutoff (single relevant item,
/// so the ideal DCG is 1).
pub fn ndcg_at_n(results: &[RankResult], n: usize) -> Result<f64> {
    if n < 1 {
        return Err(SminError::Domain(format!("NDCG cutoff must be >= 1, got {n}")));
    }
    if results.is_empty() {
        return Err(SminError::Domain("no rank results".into()));
    }
    let total: f64 = results
        .iter()
        .map(|r| {
            if r.rank <= n {
                1.0 / ((r.rank + 1) as f64).log2()
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / results.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub cutoffs: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub case_count: usize,
    /// (user, rank) per evaluated case, case order.
    pub ranks: Vec<(usize, usize)>,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn table(&self) -> String {
        let mut out = String::from("      N        HR@N      NDCG@N\n");
        for (i, &n) in self.cutoffs.iter().enumerate() {
            out.push_str(&format!("{n:>7}  {:>10.4}  {:>10.4}\n", self.hr[i], self.ndcg[i]));
        }
        out.push_str(&format!("cases: {}\n", self.case_count));
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("n,hr,ndcg\n");
        for (i, &n) in self.cutoffs.iter().enumerate() {
            out.push_str(&format!("{n},{},{}\n", self.hr[i], self.ndcg[i]));
        }
        out
    }
}

/// Ranks every case and assembles HR/NDCG at each cutoff. Scoring runs in
/// parallel; case order in the output is preserved.
pub fn evaluate(
    scorer: &impl Scorer,
    cases: &[EvalCase],
    cutoffs: &[usize],
    seed: u64,
    config_hash: &str,
) -> Result<(MetricsReport, Vec<RankResult>)> {
    if cases.is_empty() {
        return Err(SminError::Domain("empty test set".into()));
    }
    let mut cutoffs = cutoffs.to_vec();
    cutoffs.sort_unstable();
    cutoffs.dedup();
    let results: Vec<RankResult> = cases.par_iter().map(|c| rank_case(c, scorer)).collect();
    let mut hr = Vec::with_capacity(cutoffs.len());
    let mut ndcg = Vec::with_capacity(cutoffs.len());
    for &n in &cutoffs {
        hr.push(hr_at_n(&results, n)?);
        ndcg.push(ndcg_at_n(&results, n)?);
    }
    let report = MetricsReport {
        cutoffs,
        hr,
        ndcg,
        case_count: results.len(),
        ranks: results.iter().map(|r| (r.user, r.rank)).collect(),
        seed,
        config_hash: config_hash.to_string(),
    };
    Ok((report, results))
}

/// Per-candidate score dump for external recomputation:
/// `user item is_positive score` TSV lines.
pub fn score_dump(results: &[RankResult]) -> String {
    let mut out = String::new();
    for r in results {
        for (i, &(item, score)) in r.scores.iter().enumerate() {
            let flag = if i == 0 { 1 } else { 0 };
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.user, item, flag, score));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FixedScorer {
        table: Vec<Vec<f64>>,
    }

    impl Scorer for FixedScorer {
        fn score(&self, user: usize, item: usize) -> f64 {
            self.table[user][item]
        }
    }

    fn case(user: usize, positive: usize, negatives: &[usize]) -> EvalCase {
        EvalCase {
            user,
            positive,
            negatives: negatives.to_vec(),
        }
    }

    #[test]
    fn strictly_highest_positive_ranks_first() {
        let s = FixedScorer {
            table: vec![vec![9.0, 1.0, 2.0]],
        };
        let r = rank_case(&case(0, 0, &[1, 2]), &s);
        assert_eq!(r.rank, 1);
    }

    #[test]
    fn all_equal_scores_tie_break_by_id() {
        // Positive has the largest item id among 100 equal scores -> rank 100.
        let s = FixedScorer {
            table: vec![vec![5.0; 100]],
        };
        let negatives: Vec<usize> = (0..99).collect();
        let r = rank_case(&case(0, 99, &negatives), &s);
        assert_eq!(r.rank, 100);
    }

    #[test]
    fn hand_sorted_third_highest() {
        let s = FixedScorer {
            table: vec![vec![3.0, 5.0, 4.0, 1.0]],
        };
        let r = rank_case(&case(0, 0, &[1, 2, 3]), &s);
        assert_eq!(r.rank, 3);
    }

    #[test]
    fn hr_cases() {
        let mk = |rank| RankResult {
            user: 0,
            positive: 0,
            rank,
            scores: Vec::new(),
        };
        let all_first = vec![mk(1), mk(1)];
        assert_eq!(hr_at_n(&all_first, 10).unwrap(), 1.0);
        let mixed = vec![mk(3), mk(12)];
        assert_eq!(hr_at_n(&mixed, 10).unwrap(), 0.5);
        assert!(hr_at_n(&mixed, 0).is_err());
    }

    #[test]
    fn ndcg_cases() {
        let mk = |rank| RankResult {
            user: 0,
            positive: 0,
            rank,
            scores: Vec::new(),
        };
        assert_eq!(ndcg_at_n(&[mk(1)], 10).unwrap(), 1.0);
        let v = ndcg_at_n(&[mk(9)], 10).unwrap();
        assert!((v - 0.30103).abs() < 1e-5, "got {v}");
        assert_eq!(ndcg_at_n(&[mk(11)], 10).unwrap(), 0.0);
    }

    #[test]
    fn metrics_monotone_and_bounded() {
        let mk = |rank| RankResult {
            user: 0,
            positive: 0,
            rank,
            scores: Vec::new(),
        };
        let results: Vec<RankResult> = [1, 4, 7, 20, 55].into_iter().map(mk).collect();
        let mut prev_hr = 0.0;
        let mut prev_ndcg = 0.0;
        for n in [5, 10, 15, 60] {
            let hr = hr_at_n(&results, n).unwrap();
            let ndcg = ndcg_at_n(&results, n).unwrap();
            assert!((0.0..=1.0).contains(&hr));
            assert!((0.0..=1.0).contains(&ndcg));
            assert!(hr >= prev_hr && ndcg >= prev_ndcg);
            assert!(ndcg <= hr);
            prev_hr = hr;
            prev_ndcg = ndcg;
        }
    }

    #[test]
    fn ranking_invariant_under_increasing_transform() {
        let base = FixedScorer {
            table: vec![vec![0.1, 0.7, 0.3, 0.5]],
        };
        let warped = FixedScorer {
            table: vec![vec![0.1f64.exp(), 0.7f64.exp(), 0.3f64.exp(), 0.5f64.exp()]],
        };
        let c = case(0, 2, &[0, 1, 3]);
        assert_eq!(rank_case(&c, &base).rank, rank_case(&c, &warped).rank);
    }

    #[test]
    fn popularity_baseline_orders_by_count_then_id() {
        use crate::numerics::SparseMatrix;
        let train = HeteroGraph {
            user_count: 3,
            item_count: 3,
            interactions: SparseMatrix::from_triplets(
                3,
                3,
                [(0, 0, 1.0), (1, 0, 1.0), (0, 1, 1.0), (2, 1, 1.0), (2, 2, 1.0)],
            )
            .unwrap(),
            social_edges: Vec::new(),
            item_relations: Vec::new(),
            relation_entity_count: 0,
        };
        let pop = popularity_baseline(&train);
        // Counts: i0 = 2, i1 = 2, i2 = 1. Equal counts tie-break by id.
        let r = rank_case(&case(0, 2, &[0, 1]), &pop);
        assert_eq!(r.rank, 3);
        let r2 = rank_case(&case(0, 1, &[0, 2]), &pop);
        assert_eq!(r2.rank, 2); // i0 wins the tie on id
    }

    #[test]
    fn evaluate_perfect_oracle() {
        struct Oracle;
        impl Scorer for Oracle {
            fn score(&self, _u: usize, item: usize) -> f64 {
                if item == 7 {
                    1.0
                } else {
                    0.0
                }
            }
        }
        let negatives: Vec<usize> = (0..99).collect();
        let cases = vec![case(0, 7, &negatives), case(1, 7, &negatives)];
        let (report, _) = evaluate(&Oracle, &cases, &[5, 10, 15], 0, "h").unwrap();
        assert!(report.hr.iter().all(|&v| v == 1.0));
        assert!(report.ndcg.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn evaluate_rejects_empty() {
        struct Zero;
        impl Scorer for Zero {
            fn score(&self, _: usize, _: usize) -> f64 {
                0.0
            }
        }
        assert!(evaluate(&Zero, &[], &[10], 0, "h").is_err());
    }
}
