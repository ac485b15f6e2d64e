//! Metapath-guided message propagation and cross-metapath attentive fusion,
//! producing fused user/item embeddings.
//!
//! Per metapath p, layer l:
//!   h_n^(l+1) = PReLU( h_n^(l) W^(l) / |N_n| + sum_{n'} h_n'^(l) W^(l) / sqrt(|N_n||N_n'|) )
//! Layers 0..L are concatenated, projected back to width d, and fused across
//! metapaths by a softmax attention over tanh(h W1 + b1) W2 scores.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Result, SminError};
use crate::graph::HeteroGraph;
use crate::metapath::{self, Domain, MetapathKind};
use crate::numerics::{DenseMatrix, SparseMatrix, Tape, Var};

#[derive(Clone, Debug)]
pub struct AttentionParams {
    /// d x d
    pub w1: DenseMatrix,
    /// 1 x d
    pub b1: DenseMatrix,
    /// d x 1
    pub w2: DenseMatrix,
}

/// All trainable tensors of the encoder.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    /// I x d
    pub user_base: DenseMatrix,
    /// J x d
    pub item_base: DenseMatrix,
    /// Per metapath, per layer d x d transformation.
    pub prop_weights: BTreeMap<MetapathKind, Vec<DenseMatrix>>,
    /// One learnable 1x1 PReLU slope per layer, shared across metapaths.
    pub slopes: Vec<DenseMatrix>,
    /// (L+1)d x d cross-layer projections, one per domain.
    pub user_proj: DenseMatrix,
    pub item_proj: DenseMatrix,
    pub user_attention: AttentionParams,
    pub item_attention: AttentionParams,
}

#[derive(Clone, Copy)]
pub struct AttentionVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
}

/// Tape handles for every encoder tensor.
pub struct EncoderVars {
    pub user_base: Var,
    pub item_base: Var,
    pub prop_weights: BTreeMap<MetapathKind, Vec<Var>>,
    pub slopes: Vec<Var>,
    pub user_proj: Var,
    pub item_proj: Var,
    pub user_attention: AttentionVars,
    pub item_attention: AttentionVars,
}

impl EncoderVars {
    pub fn load(tape: &mut Tape, params: &EncoderParams) -> EncoderVars {
        EncoderVars {
            user_base: tape.leaf(params.user_base.clone()),
            item_base: tape.leaf(params.item_base.clone()),
            prop_weights: params
                .prop_weights
                .iter()
                .map(|(k, ws)| (*k, ws.iter().map(|w| tape.leaf(w.clone())).collect()))
                .collect(),
            slopes: params.slopes.iter().map(|s| tape.leaf(s.clone())).collect(),
            user_proj: tape.leaf(params.user_proj.clone()),
            item_proj: tape.leaf(params.item_proj.clone()),
            user_attention: AttentionVars {
                w1: tape.leaf(params.user_attention.w1.clone()),
                b1: tape.leaf(params.user_attention.b1.clone()),
                w2: tape.leaf(params.user_attention.w2.clone()),
            },
            item_attention: AttentionVars {
                w1: tape.leaf(params.item_attention.w1.clone()),
                b1: tape.leaf(params.item_attention.b1.clone()),
                w2: tape.leaf(params.item_attention.w2.clone()),
            },
        }
    }
}

/// Normalized propagation operators for the enabled metapaths.
#[derive(Clone)]
pub struct EncoderInputs {
    pub user_paths: Vec<(MetapathKind, Rc<SparseMatrix>)>,
    pub item_paths: Vec<(MetapathKind, Rc<SparseMatrix>)>,
    /// Edges dropped by the degree cap, per metapath.
    pub cap_dropped: Vec<(MetapathKind, usize)>,
}

impl EncoderInputs {
    /// Builds adjacencies and GCN operators for `enabled` metapaths over the
    /// (train) graph. Each domain must keep at least one metapath.
    pub fn build(
        graph: &HeteroGraph,
        enabled: &[MetapathKind],
        degree_cap: Option<usize>,
    ) -> Result<EncoderInputs> {
        let mut user_paths = Vec::new();
        let mut item_paths = Vec::new();
        let mut cap_dropped = Vec::new();
        for kind in MetapathKind::ALL {
            if !enabled.contains(&kind) {
                continue;
            }
            let mp = metapath::build(graph, kind, degree_cap);
            cap_dropped.push((kind, mp.cap_dropped));
            let op = metapath::gcn_coefficients(&mp).operator_rc();
            match kind.domain() {
                Domain::User => user_paths.push((kind, op)),
                Domain::Item => item_paths.push((kind, op)),
            }
        }
        if user_paths.is_empty() || item_paths.is_empty() {
            return Err(SminError::Config(
                "each domain needs at least one enabled metapath".into(),
            ));
        }
        Ok(EncoderInputs {
            user_paths,
            item_paths,
            cap_dropped,
        })
    }
}

/// One propagation layer over a normalized operator.
pub fn propagate_layer(
    tape: &mut Tape,
    operator: &Rc<SparseMatrix>,
    h: Var,
    weight: Var,
    slope: Var,
) -> Result<Var> {
    let agg = tape.spmm_sym(operator.clone(), h)?;
    let lin = tape.matmul(agg, weight)?;
    tape.prelu(lin, slope)
}

/// L propagation layers concatenated with the input: [H0 | H1 | ... | HL].
pub fn encode_metapath(
    tape: &mut Tape,
    operator: &Rc<SparseMatrix>,
    base: Var,
    weights: &[Var],
    slopes: &[Var],
) -> Result<Var> {
    if weights.is_empty() || weights.len() != slopes.len() {
        return Err(SminError::Config(format!(
            "need matching per-layer weights and slopes, got {} and {}",
            weights.len(),
            slopes.len()
        )));
    }
    let mut layers = vec![base];
    let mut h = base;
    for (w, s) in weights.iter().zip(slopes) {
        h = propagate_layer(tape, operator, h, *w, *s)?;
        layers.push(h);
    }
    tape.concat_cols(&layers)
}

/// Softmax attention across per-metapath embeddings of one domain. Returns
/// the fused embedding and a snapshot of the per-node weights (n x P).
pub fn attention_fuse(
    tape: &mut Tape,
    tilde: &[Var],
    attn: &AttentionVars,
) -> Result<(Var, DenseMatrix)> {
    if tilde.is_empty() {
        return Err(SminError::Config("attention over zero metapaths".into()));
    }
    let mut score_cols = Vec::with_capacity(tilde.len());
    for &h in tilde {
        let lin = tape.matmul(h, attn.w1)?;
        let shifted = tape.add_row_vec(lin, attn.b1)?;
        let q = tape.tanh(shifted);
        score_cols.push(tape.matmul(q, attn.w2)?);
    }
    let scores = tape.concat_cols(&score_cols)?;
    let omega = tape.softmax_rows(scores);
    let weights_snapshot = tape.value(omega).clone();
    let mut fused: Option<Var> = None;
    for (p, &h) in tilde.iter().enumerate() {
        let w = tape.slice_cols(omega, p, 1)?;
        let contrib = tape.scale_rows(w, h)?;
        fused = Some(match fused {
            Some(acc) => tape.add(acc, contrib)?,
            None => contrib,
        });
    }
    Ok((fused.expect("nonempty tilde"), weights_snapshot))
}

/// Mean pooling across metapaths (attention ablated).
pub fn mean_fuse(tape: &mut Tape, tilde: &[Var]) -> Result<(Var, DenseMatrix)> {
    if tilde.is_empty() {
        return Err(SminError::Config("mean fuse over zero metapaths".into()));
    }
    let mut acc = tilde[0];
    for &h in &tilde[1..] {
        acc = tape.add(acc, h)?;
    }
    let fused = tape.scale(acc, 1.0 / tilde.len() as f64);
    let (n, _) = tape.value(fused).shape();
    let weights = DenseMatrix::from_vec(
        n,
        tilde.len(),
        vec![1.0 / tilde.len() as f64; n * tilde.len()],
    )?;
    Ok((fused, weights))
}

/// Fused embeddings for both domains plus attention weight snapshots.
pub struct FusedVars {
    pub users: Var,
    pub items: Var,
    pub user_weights: DenseMatrix,
    pub item_weights: DenseMatrix,
}

fn encode_domain(
    tape: &mut Tape,
    paths: &[(MetapathKind, Rc<SparseMatrix>)],
    base: Var,
    vars: &EncoderVars,
    proj: Var,
    attn: &AttentionVars,
    mean_pool: bool,
) -> Result<(Var, DenseMatrix)> {
    let mut tilde = Vec::with_capacity(paths.len());
    for (kind, op) in paths {
        let weights = vars
            .prop_weights
            .get(kind)
            .ok_or_else(|| SminError::Config(format!("no propagation weights for {kind}")))?;
        let concat = encode_metapath(tape, op, base, weights, &vars.slopes)?;
        tilde.push(tape.matmul(concat, proj)?);
    }
    if mean_pool {
        mean_fuse(tape, &tilde)
    } else {
        attention_fuse(tape, &tilde, attn)
    }
}

/// Full encoder forward: per-metapath propagation, cross-layer projection,
/// attention (or mean) fusion per domain.
pub fn forward(
    tape: &mut Tape,
    vars: &EncoderVars,
    inputs: &EncoderInputs,
    mean_pool: bool,
) -> Result<FusedVars> {
    let (users, user_weights) = encode_domain(
        tape,
        &inputs.user_paths,
        vars.user_base,
        vars,
        vars.user_proj,
        &vars.user_attention,
        mean_pool,
    )?;
    let (items, item_weights) = encode_domain(
        tape,
        &inputs.item_paths,
        vars.item_base,
        vars,
        vars.item_proj,
        &vars.item_attention,
        mean_pool,
    )?;
    Ok(FusedVars {
        users,
        items,
        user_weights,
        item_weights,
    })
}

/// Value-level fused embeddings (forward through a throwaway tape).
#[derive(Clone, Debug)]
pub struct FusedEmbeddings {
    pub users: DenseMatrix,
    pub items: DenseMatrix,
    pub user_weights: DenseMatrix,
    pub item_weights: DenseMatrix,
}

pub fn forward_values(
    params: &EncoderParams,
    inputs: &EncoderInputs,
    mean_pool: bool,
) -> Result<FusedEmbeddings> {
    let mut tape = Tape::new();
    let vars = EncoderVars::load(&mut tape, params);
    let fused = forward(&mut tape, &vars, inputs, mean_pool)?;
    Ok(FusedEmbeddings {
        users: tape.value(fused.users).clone(),
        items: tape.value(fused.items).clone(),
        user_weights: fused.user_weights,
        item_weights: fused.item_weights,
    })
}

/// Fused embeddings with the encoder bypassed (heterogeneity ablation):
/// the base tables are used directly.
pub fn bypass_values(params: &EncoderParams) -> FusedEmbeddings {
    let ones = |n: usize| DenseMatrix::from_vec(n, 1, vec![1.0; n]).expect("shape");
    FusedEmbeddings {
        users: params.user_base.clone(),
        items: params.item_base.clone(),
        user_weights: ones(params.user_base.rows()),
        item_weights: ones(params.item_base.rows()),
    }
}
