//! Self-supervised mutual-information stack over the user-item interaction
//! graph: node-level GCN embedding, k-order substructure context, feature
//! corruption, and the three discriminator losses.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Result, SminError};
use crate::graph::HeteroGraph;
use crate::numerics::{DenseMatrix, SparseMatrix, Tape, Var};
use crate::rng::rng_for;

/// Fixed PReLU slope of the infomax GCN (not a trainable tensor).
pub const GCN_PRELU_SLOPE: f64 = 0.25;

/// Bilinear discriminator matrices and the GCN projection.
#[derive(Clone, Debug)]
pub struct InfomaxParams {
    /// d x d projection of Eq-style Y = PReLU(D^-1/2 Phi D^-1/2 H W).
    pub gcn_w: DenseMatrix,
    /// Global-context discriminator bilinear form.
    pub w_alpha: DenseMatrix,
    /// Node-transformation discriminator bilinear form.
    pub w_beta: DenseMatrix,
}

pub struct InfomaxVars {
    pub gcn_w: Var,
    pub w_alpha: Var,
    pub w_beta: Var,
}

impl InfomaxVars {
    pub fn load(tape: &mut Tape, params: &InfomaxParams) -> InfomaxVars {
        InfomaxVars {
            gcn_w: tape.leaf(params.gcn_w.clone()),
            w_alpha: tape.leaf(params.w_alpha.clone()),
            w_beta: tape.leaf(params.w_beta.clone()),
        }
    }
}

/// Symmetric (I+J) adjacency of the bipartite interaction graph with
/// self-loops, its degree table, and the GCN-normalized operator.
#[derive(Clone, Debug)]
pub struct BipartitePhi {
    pub phi: SparseMatrix,
    pub degrees: Vec<f64>,
    pub normalized: Rc<SparseMatrix>,
}

/// Blocks [0 X; X^T 0] plus the identity; nodes are users then items.
pub fn build_phi(graph: &HeteroGraph) -> BipartitePhi {
    let n = graph.user_count + graph.item_count;
    let offset = graph.user_count;
    let triplets = graph
        .interactions
        .iter()
        .flat_map(|(u, v, _)| [(u, offset + v, 1.0), (offset + v, u, 1.0)])
        .chain((0..n).map(|i| (i, i, 1.0)));
    let phi = SparseMatrix::from_triplets(n, n, triplets).expect("indices in range");
    let degrees = phi.row_sums();
    let normalized = Rc::new(
        SparseMatrix::from_triplets(
            n,
            n,
            phi.iter()
                .map(|(r, c, v)| (r, c, v / (degrees[r] * degrees[c]).sqrt())),
        )
        .expect("same support"),
    );
    BipartitePhi {
        phi,
        degrees,
        normalized,
    }
}

/// Interaction edges as (user, offset item) index pairs into the stacked
/// node space; the reconstruction targets of the edge loss.
pub fn interaction_edges(graph: &HeteroGraph) -> Vec<(usize, usize)> {
    let offset = graph.user_count;
    graph
        .interactions
        .iter()
        .map(|(u, v, _)| (u, offset + v))
        .collect()
}

/// k-order substructure adjacency: the union of the supports of
/// Phi^1 .. Phi^k, with every term binarized. Powers are accumulated with
/// intermediate binarization, which leaves the support unchanged (all entries
/// are nonnegative) while keeping values bounded.
pub fn build_k_adj(phi: &SparseMatrix, k: usize) -> Result<SparseMatrix> {
    if k < 1 {
        return Err(SminError::Domain(format!("k must be >= 1, got {k}")));
    }
    let base = phi.binarize();
    let mut acc = base.clone();
    let mut power = base.clone();
    for _ in 1..k {
        power = power.spgemm(&base)?.binarize();
        acc = acc.add(&power)?.binarize();
    }
    Ok(acc)
}

/// Rows divided by their sums (degree of the k-order adjacency).
pub fn row_normalize(m: &SparseMatrix) -> SparseMatrix {
    let sums = m.row_sums();
    SparseMatrix::from_triplets(
        m.rows(),
        m.cols(),
        m.iter().map(|(r, c, v)| (r, c, v / sums[r].max(1.0))),
    )
    .expect("same support")
}

/// Y = PReLU(D^-1/2 Phi D^-1/2 H W) with the fixed infomax slope.
pub fn gcn_embed(
    tape: &mut Tape,
    phi_normalized: &Rc<SparseMatrix>,
    h: Var,
    w: Var,
) -> Result<Var> {
    let agg = tape.spmm_sym(phi_normalized.clone(), h)?;
    let lin = tape.matmul(agg, w)?;
    let slope = tape.constant(GCN_PRELU_SLOPE);
    tape.prelu(lin, slope)
}

/// Fixed-point-free permutation (single cycle via Sattolo's shuffle).
/// Identity when n < 2.
pub fn corruption_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        perm.swap(i, j);
    }
    perm
}

pub fn corruption_permutation_seeded(n: usize, seed: u64) -> Vec<usize> {
    corruption_permutation(n, &mut rng_for(seed, "corruption"))
}

/// Z = row-normalized Phi^(k) times Y. The row-normalized operator is not
/// symmetric, so its transpose is carried alongside for the backward pass.
pub fn global_context(
    tape: &mut Tape,
    phik_norm: &Rc<SparseMatrix>,
    phik_norm_t: &Rc<SparseMatrix>,
    y: Var,
) -> Result<Var> {
    tape.spmm(phik_norm.clone(), phik_norm_t.clone(), y)
}

/// Global-context MI loss: positives (y_n, z_n), negatives (y~_n, z_n).
pub fn loss_alpha(tape: &mut Tape, y: Var, z: Var, y_corrupt: Var, w_alpha: Var) -> Result<Var> {
    tape.bilinear_nce(y, z, y_corrupt, w_alpha)
}

/// Node-transformation MI loss: positives (y_n, h_n), negatives (y~_n, h_n).
pub fn loss_beta(tape: &mut Tape, y: Var, h: Var, y_corrupt: Var, w_beta: Var) -> Result<Var> {
    tape.bilinear_nce(y, h, y_corrupt, w_beta)
}

/// Edge reconstruction loss over the observed interaction edges:
/// mean of (1 - z_u . z_v)^2.
pub fn loss_gamma(tape: &mut Tape, z: Var, edges: Rc<Vec<(usize, usize)>>) -> Result<Var> {
    if edges.is_empty() {
        eprintln!("warning: no interaction edges, edge-reconstruction loss is 0");
    }
    tape.edge_recon(edges, z)
}

/// Value-level corruption: permuted features and their re-encoding.
pub fn corrupt_values(
    h: &DenseMatrix,
    phi: &BipartitePhi,
    gcn_w: &DenseMatrix,
    seed: u64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let perm = Rc::new(corruption_permutation_seeded(h.rows(), seed));
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let wv = tape.leaf(gcn_w.clone());
    let shuffled = tape.permute_rows(perm, hv)?;
    let y = gcn_embed(&mut tape, &phi.normalized, shuffled, wv)?;
    Ok((tape.value(shuffled).clone(), tape.value(y).clone()))
}

/// Mean discriminator probabilities on positive and corrupted pairs of the
/// global-context discriminator (diagnostic readout).
pub fn discriminator_scores(
    y: &DenseMatrix,
    z: &DenseMatrix,
    y_corrupt: &DenseMatrix,
    w_alpha: &DenseMatrix,
) -> Result<(f64, f64)> {
    let n = y.rows();
    if n == 0 {
        return Err(SminError::Domain("no nodes to score".into()));
    }
    let zw = z.matmul_nt(w_alpha)?;
    let mut pos = 0.0;
    let mut neg = 0.0;
    for i in 0..n {
        let sp: f64 = y.row(i).iter().zip(zw.row(i)).map(|(&a, &b)| a * b).sum();
        let sn: f64 = y_corrupt
            .row(i)
            .iter()
            .zip(zw.row(i))
            .map(|(&a, &b)| a * b)
            .sum();
        pos += 1.0 / (1.0 + (-sp).exp());
        neg += 1.0 / (1.0 + (-sn).exp());
    }
    Ok((pos / n as f64, neg / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::prelu;

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
    fn phi_blocks_and_self_loops() {
        let g = toy_graph(&[(0, 0), (1, 0)], 2, 1);
        let phi = build_phi(&g);
        assert_eq!(phi.phi.get(0, 2), 1.0); // u0 - i0
        assert_eq!(phi.phi.get(2, 1), 1.0); // i0 - u1
        assert_eq!(phi.phi.get(0, 0), 1.0); // self-loop
        assert!(phi.phi.is_symmetric());
        assert_eq!(phi.degrees, vec![2.0, 2.0, 3.0]);
    }

    #[test]
    fn gcn_embed_single_self_loop_node_is_prelu() {
        // One user, one item, no interaction between them is impossible
        // (empty graphs are rejected upstream); emulate with a 1-node phi.
        let phi = BipartitePhi {
            phi: SparseMatrix::identity(1),
            degrees: vec![1.0],
            normalized: Rc::new(SparseMatrix::identity(1)),
        };
        let h = DenseMatrix::from_rows(&[vec![2.0, -2.0]]).unwrap();
        let w = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut tape = Tape::new();
        let hv = tape.leaf(h.clone());
        let wv = tape.leaf(w);
        let y = gcn_embed(&mut tape, &phi.normalized, hv, wv).unwrap();
        assert_eq!(tape.value(y).values(), prelu(&h, GCN_PRELU_SLOPE).values());
    }

    #[test]
    fn gcn_embed_two_node_hand_case() {
        // Two nodes, one edge plus self-loops; D = diag(2, 2) so every
        // normalized entry is 1/2. H = I, W = I: Y = PReLU([[.5,.5],[.5,.5]]).
        let phi = SparseMatrix::from_triplets(
            2,
            2,
            [(0, 0, 1.0), (1, 1, 1.0), (0, 1, 1.0), (1, 0, 1.0)],
        )
        .unwrap();
        let degrees = phi.row_sums();
        let normalized = Rc::new(
            SparseMatrix::from_triplets(
                2,
                2,
                phi.iter().map(|(r, c, v)| (r, c, v / (degrees[r] * degrees[c]).sqrt())),
            )
            .unwrap(),
        );
        let mut tape = Tape::new();
        let h = tape.leaf(DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let w = tape.leaf(DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let y = gcn_embed(&mut tape, &normalized, h, w).unwrap();
        assert_eq!(tape.value(y).values(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn k_adj_base_case_and_two_hop() {
        // 3 users, 3 items: u0-i0, u0-i1, u1-i1, u2-i2.
        let g = toy_graph(&[(0, 0), (0, 1), (1, 1), (2, 2)], 3, 3);
        let phi = build_phi(&g);
        let k1 = build_k_adj(&phi.phi, 1).unwrap();
        assert_eq!(k1, phi.phi.binarize());
        let k2 = build_k_adj(&phi.phi, 2).unwrap();
        // Gains the 2-hop pairs (u0,u1) via i1 and (i0,i1) via u0.
        assert_eq!(k2.get(0, 1), 1.0);
        assert_eq!(k2.get(3, 4), 1.0);
        // u2/i2 stay disconnected from the rest.
        assert_eq!(k2.get(2, 0), 0.0);
        // Monotone support.
        for (r, c, _) in k1.iter() {
            assert_eq!(k2.get(r, c), 1.0);
        }
    }

    #[test]
    fn k_adj_rejects_zero() {
        let g = toy_graph(&[(0, 0)], 1, 1);
        let phi = build_phi(&g);
        assert!(build_k_adj(&phi.phi, 0).is_err());
    }

    #[test]
    fn global_context_identity_and_average() {
        let mut tape = Tape::new();
        let y = tape.leaf(DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let ident = Rc::new(SparseMatrix::identity(2));
        let z = global_context(&mut tape, &ident, &ident, y).unwrap();
        assert_eq!(tape.value(z).values(), tape.value(y).values());

        // A row pointing at both Y rows averages them.
        let m = SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)]).unwrap();
        let norm = Rc::new(row_normalize(&m));
        let norm_t = Rc::new(norm.transpose());
        let z = global_context(&mut tape, &norm, &norm_t, y).unwrap();
        assert_eq!(tape.value(z).row(0), &[0.5, 0.5]);
    }

    #[test]
    fn corruption_is_fixed_point_free_and_deterministic() {
        let a = corruption_permutation_seeded(10, 7);
        let b = corruption_permutation_seeded(10, 7);
        assert_eq!(a, b);
        for (i, &p) in a.iter().enumerate() {
            assert_ne!(i, p);
        }
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn chance_level_losses_hit_two_log_two() {
        // W = 0 makes every discriminator score sigmoid(0) = 1/2.
        let n = 4;
        let d = 3;
        let mut tape = Tape::new();
        let y = tape.leaf(DenseMatrix::from_vec(n, d, vec![0.3; n * d]).unwrap());
        let z = tape.leaf(DenseMatrix::from_vec(n, d, vec![-0.2; n * d]).unwrap());
        let yc = tape.leaf(DenseMatrix::from_vec(n, d, vec![0.9; n * d]).unwrap());
        let w = tape.leaf(DenseMatrix::zeros(d, d));
        let la = loss_alpha(&mut tape, y, z, yc, w).unwrap();
        let expect = 2.0 * std::f64::consts::LN_2;
        assert!((tape.value(la).item() - expect).abs() < 1e-12);

        // Swapping positive and negative roles leaves the chance value unchanged.
        let swapped = loss_alpha(&mut tape, yc, z, y, w).unwrap();
        assert!((tape.value(swapped).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_beta_hand_case() {
        // H orthonormal rows, Y = H, W = I: positive scores sigmoid(1),
        // corrupted scores sigmoid(0) -> loss = -ln s(1) - ln(1 - s(0)).
        let h = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut tape = Tape::new();
        let hv = tape.leaf(h.clone());
        let perm = Rc::new(vec![1usize, 0]);
        let hc = tape.permute_rows(perm, hv).unwrap();
        let w = tape.leaf(DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let lb = loss_beta(&mut tape, hv, hv, hc, w).unwrap();
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        let expect = -(s1.ln()) - (1.0f64 - 0.5).ln();
        assert!((tape.value(lb).item() - expect).abs() < 1e-12);
        // Hand values: 0.3133 + 0.6931.
        assert!((tape.value(lb).item() - (0.31326168751822286 + 0.6931471805599453)).abs() < 1e-12);
    }

    #[test]
    fn gamma_perfect_and_orthogonal() {
        let mut tape = Tape::new();
        // Unit-norm identical rows: every dot = 1 -> loss 0.
        let z = tape.leaf(DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap());
        let l = loss_gamma(&mut tape, z, Rc::new(vec![(0, 1)])).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        // Orthogonal rows on a single edge -> loss 1.
        let z2 = tape.leaf(DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let l2 = loss_gamma(&mut tape, z2, Rc::new(vec![(0, 1)])).unwrap();
        assert_eq!(tape.value(l2).item(), 1.0);
    }

    #[test]
    fn gamma_hand_mean_over_four_edges() {
        let z = DenseMatrix::from_rows(&[
            vec![0.5, 0.5],
            vec![1.0, 0.0],
            vec![0.0, 2.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let edges = vec![(0, 1), (0, 2), (1, 3), (2, 3)];
        let expect: f64 = edges
            .iter()
            .map(|&(a, b)| {
                let dot: f64 = z.row(a).iter().zip(z.row(b)).map(|(&x, &y)| x * y).sum();
                (1.0 - dot) * (1.0 - dot)
            })
            .sum::<f64>()
            / 4.0;
        let mut tape = Tape::new();
        let zv = tape.leaf(z);
        let l = loss_gamma(&mut tape, zv, Rc::new(edges)).unwrap();
        assert!((tape.value(l).item() - expect).abs() < 1e-15);
    }
}
