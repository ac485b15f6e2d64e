//! Leave-one-out train/test splitting and evaluation negative sampling.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Result, SminError};
use crate::graph::HeteroGraph;
use crate::numerics::SparseMatrix;
use crate::rng::rng_for;

/// Number of sampled negatives per held-out positive.
pub const EVAL_NEGATIVES: usize = 99;

/// One held-out positive plus sampled negatives for a single user.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalCase {
    pub user: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Train graph with one interaction per eligible user moved to the test side.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: HeteroGraph,
    /// (user, held-out item), one per user with >= 2 interactions.
    pub held_out: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Removes one uniformly chosen interaction per user with at least two
/// interactions. Users with a single interaction stay train-only.
pub fn split_leave_one_out(graph: &HeteroGraph, seed: u64) -> Result<Split> {
    if graph.interaction_count() == 0 {
        return Err(SminError::EmptyData("cannot split an empty graph".into()));
    }
    let mut rng = rng_for(seed, "split");
    let mut held_out = Vec::new();
    let mut train_triplets = Vec::with_capacity(graph.interaction_count());
    for user in 0..graph.user_count {
        let items = graph.user_items(user);
        if items.len() >= 2 {
            let drop = items[rng.gen_range(0..items.len())];
            held_out.push((user, drop));
            train_triplets.extend(
                items
                    .iter()
                    .filter(|&&v| v != drop)
                    .map(|&v| (user, v, 1.0)),
            );
        } else {
            train_triplets.extend(items.iter().map(|&v| (user, v, 1.0)));
        }
    }
    let train_x = SparseMatrix::from_triplets(graph.user_count, graph.item_count, train_triplets)?;
    Ok(Split {
        train: graph.with_interactions(train_x),
        held_out,
        seed,
    })
}

/// Draws 99 distinct negatives per held-out positive, uniformly without
/// replacement over items the user never interacted with in the full data.
pub fn sample_eval_negatives(
    graph: &HeteroGraph,
    split: &Split,
    seed: u64,
) -> Result<Vec<EvalCase>> {
    let mut rng = rng_for(seed, "negatives");
    let mut cases = Vec::with_capacity(split.held_out.len());
    for &(user, positive) in &split.held_out {
        let interacted: HashSet<usize> = graph.user_items(user).iter().copied().collect();
        let eligible = graph.item_count - interacted.len();
        if eligible < EVAL_NEGATIVES {
            return Err(SminError::Sampling {
                user,
                msg: format!(
                    "only {eligible} items without interaction, need {EVAL_NEGATIVES}"
                ),
            });
        }
        let mut chosen = HashSet::with_capacity(EVAL_NEGATIVES);
        let mut negatives = Vec::with_capacity(EVAL_NEGATIVES);
        while negatives.len() < EVAL_NEGATIVES {
            let candidate = rng.gen_range(0..graph.item_count);
            if interacted.contains(&candidate) || !chosen.insert(candidate) {
                continue;
            }
            negatives.push(candidate);
        }
        cases.push(EvalCase {
            user,
            positive,
            negatives,
        });
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_graph(pairs: &[(usize, usize)], users: usize, items: usize) -> HeteroGraph {
        HeteroGraph {
            user_count: users,
            item_count: items,
            interactions: SparseMatrix::from_triplets(
                users,
                items,
                pairs.iter().map(|&(u, v)| (u, v, 1.0)),
            )
            .unwrap(),
            social_edges: Vec::new(),
            item_relations: Vec::new(),
            relation_entity_count: 0,
        }
    }

    #[test]
    fn single_interaction_user_stays_in_train() {
        let g = toy_graph(&[(0, 0), (1, 0), (1, 1)], 2, 2);
        let s = split_leave_one_out(&g, 3).unwrap();
        assert_eq!(s.held_out.len(), 1);
        assert_eq!(s.held_out[0].0, 1);
        assert_eq!(s.train.user_items(0), &[0]);
        assert_eq!(s.train.user_items(1).len(), 1);
    }

    #[test]
    fn counts_conserved() {
        let pairs: Vec<(usize, usize)> = (0..5).map(|v| (0, v)).collect();
        let g = toy_graph(&pairs, 1, 5);
        let s = split_leave_one_out(&g, 9).unwrap();
        assert_eq!(s.train.interaction_count(), 4);
        assert_eq!(s.held_out.len(), 1);
        // Train union held-out equals the original interactions.
        let mut all: Vec<usize> = s.train.user_items(0).to_vec();
        all.push(s.held_out[0].1);
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn same_seed_same_split() {
        let pairs: Vec<(usize, usize)> = (0..8)
            .flat_map(|u| (0..4).map(move |v| (u, (u + v) % 10)))
            .collect();
        let g = toy_graph(&pairs, 8, 10);
        let a = split_leave_one_out(&g, 77).unwrap();
        let b = split_leave_one_out(&g, 77).unwrap();
        assert_eq!(a.held_out, b.held_out);
    }

    #[test]
    fn negatives_distinct_and_never_interacted() {
        let pairs: Vec<(usize, usize)> = (0..5).map(|v| (0, v)).collect();
        let g = toy_graph(&pairs, 1, 200);
        let s = split_leave_one_out(&g, 5).unwrap();
        let cases = sample_eval_negatives(&g, &s, 5).unwrap();
        assert_eq!(cases.len(), 1);
        let case = &cases[0];
        assert_eq!(case.negatives.len(), EVAL_NEGATIVES);
        let distinct: HashSet<_> = case.negatives.iter().collect();
        assert_eq!(distinct.len(), EVAL_NEGATIVES);
        for &n in &case.negatives {
            assert!(!g.user_items(0).contains(&n));
            assert_ne!(n, case.positive);
        }
    }

    #[test]
    fn too_few_eligible_items_is_an_error() {
        let pairs: Vec<(usize, usize)> = (0..5).map(|v| (0, v)).collect();
        let g = toy_graph(&pairs, 1, 50);
        let s = split_leave_one_out(&g, 5).unwrap();
        let err = sample_eval_negatives(&g, &s, 5).unwrap_err();
        match err {
            SminError::Sampling { user, .. } => assert_eq!(user, 0),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn negative_sampling_deterministic() {
        let pairs: Vec<(usize, usize)> = (0..6).flat_map(|u| [(u, u), (u, u + 6)]).collect();
        let g = toy_graph(&pairs, 6, 150);
        let s = split_leave_one_out(&g, 2).unwrap();
        let a = sample_eval_negatives(&g, &s, 11).unwrap();
        let b = sample_eval_negatives(&g, &s, 11).unwrap();
        assert_eq!(a, b);
    }
}
