//! The five meta-relations over the collaborative heterogeneous graph,
//! materialized as symmetric binary adjacencies with GCN normalization
//! coefficients, plus a brute-force path-enumeration oracle for testing.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use crate::error::{Result, SminError};
use crate::graph::HeteroGraph;
use crate::numerics::SparseMatrix;

/// Node limit for the enumeration oracle.
const ORACLE_NODE_LIMIT: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetapathKind {
    /// user -social- user
    UU,
    /// user -interact- item -interact- user
    UIU,
    /// user -interact- item -relation- entity -relation- item -interact- user
    UIKIU,
    /// item -interact- user -interact- item
    IUI,
    /// item -relation- entity -relation- item
    IKI,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    User,
    Item,
}

impl MetapathKind {
    pub const ALL: [MetapathKind; 5] = [
        MetapathKind::UU,
        MetapathKind::UIU,
        MetapathKind::UIKIU,
        MetapathKind::IUI,
        MetapathKind::IKI,
    ];

    pub fn domain(self) -> Domain {
        match self {
            MetapathKind::UU | MetapathKind::UIU | MetapathKind::UIKIU => Domain::User,
            MetapathKind::IUI | MetapathKind::IKI => Domain::Item,
        }
    }

    /// Whether the degree cap applies (dense co-occurrence products only).
    fn cappable(self) -> bool {
        matches!(
            self,
            MetapathKind::UIU | MetapathKind::UIKIU | MetapathKind::IUI
        )
    }
}

impl fmt::Display for MetapathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MetapathKind::UU => "UU",
            MetapathKind::UIU => "UIU",
            MetapathKind::UIKIU => "UIKIU",
            MetapathKind::IUI => "IUI",
            MetapathKind::IKI => "IKI",
        };
        f.write_str(s)
    }
}

impl FromStr for MetapathKind {
    type Err = SminError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "UU" => Ok(MetapathKind::UU),
            "UIU" => Ok(MetapathKind::UIU),
            "UIKIU" => Ok(MetapathKind::UIKIU),
            "IUI" => Ok(MetapathKind::IUI),
            "IKI" => Ok(MetapathKind::IKI),
            other => Err(SminError::Config(format!(
                "unknown metapath '{other}' (expected UU, UIU, UIKIU, IUI or IKI)"
            ))),
        }
    }
}

/// One built meta-relation: symmetric binary adjacency with zero diagonal.
#[derive(Clone, Debug)]
pub struct MetapathAdjacency {
    pub kind: MetapathKind,
    pub adj: SparseMatrix,
    /// Row sums of the binary adjacency.
    pub neighbor_counts: Vec<usize>,
    /// Edges dropped by the degree cap (0 when no cap applied or binding).
    pub cap_dropped: usize,
}

fn finish(kind: MetapathKind, counts: SparseMatrix, cap: Option<usize>) -> MetapathAdjacency {
    let counts = counts.without_diagonal();
    let (capped, dropped) = match cap {
        Some(m) if kind.cappable() => apply_degree_cap(&counts, m),
        _ => (counts, 0),
    };
    let adj = capped.binarize();
    let neighbor_counts = (0..adj.rows()).map(|r| adj.row_nnz(r)).collect();
    MetapathAdjacency {
        kind,
        adj,
        neighbor_counts,
        cap_dropped: dropped,
    }
}

/// Keeps, per row, the top-m entries by (path count desc, column asc), then
/// takes the union with the transposed selection so the result stays
/// symmetric. Rows below the cap are untouched.
fn apply_degree_cap(counts: &SparseMatrix, m: usize) -> (SparseMatrix, usize) {
    let n = counts.rows();
    let mut keep: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut any_capped = false;
    for r in 0..n {
        let (cols, vals) = counts.row(r);
        if cols.len() <= m {
            keep[r] = cols.to_vec();
            continue;
        }
        any_capped = true;
        let mut order: Vec<usize> = (0..cols.len()).collect();
        order.sort_by(|&a, &b| {
            vals[b]
                .total_cmp(&vals[a])
                .then_with(|| cols[a].cmp(&cols[b]))
        });
        let mut kept: Vec<usize> = order[..m].iter().map(|&i| cols[i]).collect();
        kept.sort_unstable();
        keep[r] = kept;
    }
    if !any_capped {
        return (counts.clone(), 0);
    }
    let mut triplets = Vec::new();
    for (r, cols) in keep.iter().enumerate() {
        for &c in cols {
            triplets.push((r, c, 1.0));
            triplets.push((c, r, 1.0));
        }
    }
    let capped = SparseMatrix::from_triplets(n, n, triplets)
        .expect("cap keeps indices in range")
        .binarize();
    let dropped = counts.nnz() - capped.nnz();
    (capped, dropped)
}

/// Symmetrized social ties with the diagonal removed.
pub fn build_uu(graph: &HeteroGraph) -> MetapathAdjacency {
    let n = graph.user_count;
    let sym = SparseMatrix::from_triplets(
        n,
        n,
        graph
            .social_edges
            .iter()
            .flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)]),
    )
    .expect("social edges validated at load");
    finish(MetapathKind::UU, sym, None)
}

/// Co-interaction between users: binarize(X X^T).
pub fn build_uiu(graph: &HeteroGraph, cap: Option<usize>) -> MetapathAdjacency {
    let x = &graph.interactions;
    let counts = x.spgemm(&x.transpose()).expect("X X^T shapes agree");
    finish(MetapathKind::UIU, counts, cap)
}

/// Users linked through knowledge-related items: binarize(X C C^T X^T),
/// computed as (X C)(X C)^T.
pub fn build_uikiu(graph: &HeteroGraph, cap: Option<usize>) -> MetapathAdjacency {
    let xc = graph
        .interactions
        .spgemm(&graph.relation_incidence())
        .expect("X C shapes agree");
    let counts = xc.spgemm(&xc.transpose()).expect("square product");
    finish(MetapathKind::UIKIU, counts, cap)
}

/// Items co-interacted by a user: binarize(X^T X).
pub fn build_iui(graph: &HeteroGraph, cap: Option<usize>) -> MetapathAdjacency {
    let xt = graph.interactions.transpose();
    let counts = xt.spgemm(&graph.interactions).expect("X^T X shapes agree");
    finish(MetapathKind::IUI, counts, cap)
}

/// Items sharing a relation entity: binarize(C C^T).
pub fn build_iki(graph: &HeteroGraph) -> MetapathAdjacency {
    let c = graph.relation_incidence();
    let counts = c.spgemm(&c.transpose()).expect("C C^T shapes agree");
    finish(MetapathKind::IKI, counts, None)
}

pub fn build(graph: &HeteroGraph, kind: MetapathKind, cap: Option<usize>) -> MetapathAdjacency {
    match kind {
        MetapathKind::UU => build_uu(graph),
        MetapathKind::UIU => build_uiu(graph, cap),
        MetapathKind::UIKIU => build_uikiu(graph, cap),
        MetapathKind::IUI => build_iui(graph, cap),
        MetapathKind::IKI => build_iki(graph),
    }
}

/// Binary adjacency by explicit enumeration of every vertex sequence matching
/// the metapath schema, endpoints distinct. Quadratic and deliberately naive;
/// testing oracle only.
pub fn oracle_paths(graph: &HeteroGraph, kind: MetapathKind) -> Result<SparseMatrix> {
    let nodes = graph.user_count + graph.item_count + graph.relation_entity_count;
    if nodes > ORACLE_NODE_LIMIT {
        return Err(SminError::TooLarge {
            nodes,
            limit: ORACLE_NODE_LIMIT,
        });
    }
    let x = graph.interactions.to_dense();
    let c = graph.relation_incidence().to_dense();
    let (users, items, ents) = (
        graph.user_count,
        graph.item_count,
        graph.relation_entity_count,
    );
    let mut triplets = Vec::new();
    match kind {
        MetapathKind::UU => {
            for &(a, b) in &graph.social_edges {
                if a != b {
                    triplets.push((a, b, 1.0));
                    triplets.push((b, a, 1.0));
                }
            }
        }
        MetapathKind::UIU => {
            for u in 0..users {
                for w in 0..users {
                    if u == w {
                        continue;
                    }
                    if (0..items).any(|j| x.get(u, j) != 0.0 && x.get(w, j) != 0.0) {
                        triplets.push((u, w, 1.0));
                    }
                }
            }
        }
        MetapathKind::UIKIU => {
            for u in 0..users {
                for w in 0..users {
                    if u == w {
                        continue;
                    }
                    let connected = (0..items).any(|j| {
                        x.get(u, j) != 0.0
                            && (0..ents).any(|r| {
                                c.get(j, r) != 0.0
                                    && (0..items).any(|j2| {
                                        c.get(j2, r) != 0.0 && x.get(w, j2) != 0.0
                                    })
                            })
                    });
                    if connected {
                        triplets.push((u, w, 1.0));
                    }
                }
            }
        }
        MetapathKind::IUI => {
            for j in 0..items {
                for j2 in 0..items {
                    if j == j2 {
                        continue;
                    }
                    if (0..users).any(|u| x.get(u, j) != 0.0 && x.get(u, j2) != 0.0) {
                        triplets.push((j, j2, 1.0));
                    }
                }
            }
        }
        MetapathKind::IKI => {
            for j in 0..items {
                for j2 in 0..items {
                    if j == j2 {
                        continue;
                    }
                    if (0..ents).any(|r| c.get(j, r) != 0.0 && c.get(j2, r) != 0.0) {
                        triplets.push((j, j2, 1.0));
                    }
                }
            }
        }
    }
    let n = match kind.domain() {
        Domain::User => users,
        Domain::Item => items,
    };
    SparseMatrix::from_triplets(n, n, triplets).map(|m| m.binarize())
}

/// Per-node self and per-edge neighbor coefficients of the propagation layer.
#[derive(Clone, Debug)]
pub struct GcnCoefficients {
    /// 1 / max(1, |N_n|) per node.
    pub self_coef: Vec<f64>,
    /// 1 / sqrt(|N_n| |N_n'|) per adjacency edge, canonical entry order.
    pub edge_coef: SparseMatrix,
}

impl GcnCoefficients {
    /// Combined operator S = diag(self_coef) + edge_coef. Left-multiplying a
    /// feature matrix by S performs one layer's aggregation. Symmetric.
    pub fn operator(&self) -> SparseMatrix {
        let n = self.self_coef.len();
        let diag = self
            .self_coef
            .iter()
            .enumerate()
            .map(|(i, &v)| (i, i, v));
        SparseMatrix::from_triplets(n, n, self.edge_coef.iter().chain(diag))
            .expect("coefficients stay in range")
    }

    pub fn operator_rc(&self) -> Rc<SparseMatrix> {
        Rc::new(self.operator())
    }
}

pub fn gcn_coefficients(mp: &MetapathAdjacency) -> GcnCoefficients {
    let deg = &mp.neighbor_counts;
    let self_coef = deg
        .iter()
        .map(|&d| 1.0 / (d.max(1) as f64))
        .collect();
    let edge_coef = SparseMatrix::from_triplets(
        mp.adj.rows(),
        mp.adj.cols(),
        mp.adj
            .iter()
            .map(|(r, c, _)| (r, c, 1.0 / ((deg[r] * deg[c]) as f64).sqrt())),
    )
    .expect("same support as adjacency");
    GcnCoefficients {
        self_coef,
        edge_coef,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(
        users: usize,
        items: usize,
        inter: &[(usize, usize)],
        social: &[(usize, usize)],
        rels: &[(usize, usize)],
        ents: usize,
    ) -> HeteroGraph {
        HeteroGraph {
            user_count: users,
            item_count: items,
            interactions: SparseMatrix::from_triplets(
                users,
                items,
                inter.iter().map(|&(u, v)| (u, v, 1.0)),
            )
            .unwrap(),
            social_edges: social.to_vec(),
            item_relations: rels.to_vec(),
            relation_entity_count: ents,
        }
    }

    #[test]
    fn uu_symmetrizes_and_drops_self_edges() {
        let g = graph(3, 1, &[(0, 0)], &[(0, 1), (2, 2)], &[], 0);
        let mp = build_uu(&g);
        assert_eq!(mp.adj.get(0, 1), 1.0);
        assert_eq!(mp.adj.get(1, 0), 1.0);
        assert_eq!(mp.adj.get(2, 2), 0.0);
        assert_eq!(mp.neighbor_counts, vec![1, 1, 0]);
    }

    #[test]
    fn uiu_fixture() {
        // u0:{i0,i1}, u1:{i1}, u2:{i2} -> only (u0,u1) share an item.
        let g = graph(3, 3, &[(0, 0), (0, 1), (1, 1), (2, 2)], &[], &[], 0);
        let mp = build_uiu(&g, None);
        assert_eq!(mp.adj.nnz(), 2);
        assert_eq!(mp.adj.get(0, 1), 1.0);
        assert_eq!(mp.adj.get(1, 0), 1.0);
        assert_eq!(mp.neighbor_counts, vec![1, 1, 0]);
    }

    #[test]
    fn uikiu_fixture_via_shared_category() {
        // i0,i1 share c0; u0:{i0}, u1:{i1} -> edge (u0,u1).
        let g = graph(2, 2, &[(0, 0), (1, 1)], &[], &[(0, 0), (1, 0)], 1);
        let mp = build_uikiu(&g, None);
        assert_eq!(mp.adj.get(0, 1), 1.0);
        // No relations at all -> empty.
        let g2 = graph(2, 2, &[(0, 0), (1, 1)], &[], &[], 0);
        assert_eq!(build_uikiu(&g2, None).adj.nnz(), 0);
    }

    #[test]
    fn iui_fixture() {
        let g = graph(3, 3, &[(0, 0), (0, 1), (1, 1), (2, 2)], &[], &[], 0);
        let mp = build_iui(&g, None);
        assert_eq!(mp.adj.get(0, 1), 1.0);
        assert_eq!(mp.adj.get(1, 0), 1.0);
        // i2 only interacted by u2 alone with no co-interaction.
        assert_eq!(mp.neighbor_counts[2], 0);
    }

    #[test]
    fn iki_fixture() {
        let g = graph(1, 3, &[(0, 0)], &[], &[(0, 0), (1, 0), (2, 1)], 2);
        let mp = build_iki(&g);
        assert_eq!(mp.adj.get(0, 1), 1.0);
        assert_eq!(mp.neighbor_counts, vec![1, 1, 0]);
    }

    #[test]
    fn oracle_matches_builders_on_fixture() {
        let g = graph(
            3,
            3,
            &[(0, 0), (0, 1), (1, 1), (2, 2)],
            &[(0, 2)],
            &[(0, 0), (1, 0), (2, 1)],
            2,
        );
        for kind in MetapathKind::ALL {
            let built = build(&g, kind, None);
            let oracle = oracle_paths(&g, kind).unwrap();
            assert_eq!(built.adj, oracle, "mismatch on {kind}");
        }
    }

    #[test]
    fn oracle_rejects_large_graphs() {
        let g = graph(900, 200, &[(0, 0)], &[], &[], 0);
        assert!(matches!(
            oracle_paths(&g, MetapathKind::UIU),
            Err(SminError::TooLarge { .. })
        ));
    }

    #[test]
    fn coefficients_match_hand_values() {
        // Star: node 0 adjacent to 1..=4.
        let adj = SparseMatrix::from_triplets(
            5,
            5,
            (1..5).flat_map(|i| [(0, i, 1.0), (i, 0, 1.0)]),
        )
        .unwrap();
        let mp = MetapathAdjacency {
            kind: MetapathKind::UU,
            neighbor_counts: (0..5).map(|r| adj.row_nnz(r)).collect(),
            adj,
            cap_dropped: 0,
        };
        let coefs = gcn_coefficients(&mp);
        assert_eq!(coefs.self_coef[0], 0.25);
        assert_eq!(coefs.self_coef[1], 1.0);
        // Edge between degree-1 and degree-4 nodes: 1/sqrt(4) = 0.5.
        assert_eq!(coefs.edge_coef.get(0, 1), 0.5);
    }

    #[test]
    fn isolated_node_guard() {
        let g = graph(2, 1, &[(0, 0)], &[], &[], 0);
        let mp = build_uiu(&g, None);
        let coefs = gcn_coefficients(&mp);
        assert_eq!(coefs.self_coef, vec![1.0, 1.0]);
    }

    #[test]
    fn degree_cap_keeps_symmetry_and_strongest_counts() {
        // u0 co-interacts with u1 twice (i0, i1) and with u2 once (i2).
        let g = graph(
            3,
            3,
            &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 2)],
            &[],
            &[],
            0,
        );
        let mp = build_uiu(&g, Some(1));
        // Row u0 keeps only the strongest neighbor u1; union symmetrization
        // restores (u2,u0) since u0 is u2's top neighbor.
        assert_eq!(mp.adj.get(0, 1), 1.0);
        assert!(mp.adj.is_symmetric());
        assert!(mp.cap_dropped <= 2);
        let uncapped = build_uiu(&g, None);
        assert!(mp.adj.nnz() <= uncapped.adj.nnz());
    }
}
