//! Joint optimization: BPR ranking loss plus weighted mutual-information
//! losses and L2 regularization, trained with Adam under per-epoch learning
//! rate decay.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{self, EncoderInputs, FusedEmbeddings, FusedVars};
use crate::error::{Result, SminError};
use crate::graph::HeteroGraph;
use crate::infomax::{self, BipartitePhi};
use crate::metapath::{Domain, MetapathKind};
use crate::model::{ModelParams, ModelVars};
use crate::numerics::{
    adam_step, finite_diff_check, AdamState, BprTriple, DenseMatrix, FdReport, SparseMatrix, Tape,
    Var,
};
use crate::rng::rng_for;

/// Component switches matching the published ablation variants.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ablation {
    /// Bypass the metapath encoder; base embeddings are used directly.
    pub no_hetero: bool,
    /// Drop all three mutual-information terms.
    pub no_mi: bool,
    /// Drop the global-context term only.
    pub no_mi_global: bool,
    /// Drop the node-transformation and edge-reconstruction terms.
    pub no_mi_topology: bool,
    /// Replace attention fusion with mean pooling.
    pub mean_pool: bool,
    /// Metapaths excluded from the encoder.
    pub dropped_metapaths: Vec<MetapathKind>,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub d: usize,
    pub layers: usize,
    pub k: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda0: f64,
    pub lambda_alpha: f64,
    pub lambda_beta: f64,
    pub lambda_gamma: f64,
    pub neg_per_pos: usize,
    pub seed: u64,
    pub degree_cap: Option<usize>,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 64,
            layers: 2,
            k: 2,
            lr: 0.05,
            lr_decay: 0.95,
            batch_size: 2048,
            epochs: 100,
            lambda0: 0.05,
            lambda_alpha: 0.1,
            lambda_beta: 0.1,
            lambda_gamma: 0.1,
            neg_per_pos: 1,
            seed: 42,
            degree_cap: Some(500),
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(8..=128).contains(&self.d) {
            return Err(SminError::Config(format!("d must be in 8..=128, got {}", self.d)));
        }
        if !(1..=3).contains(&self.layers) {
            return Err(SminError::Config(format!(
                "layers must be in 1..=3, got {}",
                self.layers
            )));
        }
        if self.k < 1 {
            return Err(SminError::Config(format!("k must be >= 1, got {}", self.k)));
        }
        if self.lr <= 0.0 || self.lr_decay <= 0.0 {
            return Err(SminError::Config("learning rate and decay must be > 0".into()));
        }
        if self.batch_size == 0 || self.neg_per_pos == 0 {
            return Err(SminError::Config("batch_size and neg_per_pos must be >= 1".into()));
        }
        for (name, l) in [
            ("lambda0", self.lambda0),
            ("lambda_alpha", self.lambda_alpha),
            ("lambda_beta", self.lambda_beta),
            ("lambda_gamma", self.lambda_gamma),
        ] {
            if l < 0.0 {
                return Err(SminError::Config(format!("{name} must be >= 0, got {l}")));
            }
        }
        if !self.ablation.no_hetero {
            self.enabled_metapaths_checked()?;
        }
        Ok(())
    }

    /// Metapaths left after drops, canonical order.
    pub fn enabled_metapaths(&self) -> Vec<MetapathKind> {
        MetapathKind::ALL
            .into_iter()
            .filter(|k| !self.ablation.dropped_metapaths.contains(k))
            .collect()
    }

    fn enabled_metapaths_checked(&self) -> Result<Vec<MetapathKind>> {
        let enabled = self.enabled_metapaths();
        for domain in [Domain::User, Domain::Item] {
            if !enabled.iter().any(|k| k.domain() == domain) {
                return Err(SminError::Config(format!(
                    "dropping {:?} leaves the {domain:?} domain without metapaths",
                    self.ablation.dropped_metapaths
                )));
            }
        }
        Ok(enabled)
    }

    /// Which auxiliary terms are computed at all.
    pub fn alpha_enabled(&self) -> bool {
        !(self.ablation.no_mi || self.ablation.no_mi_global)
    }

    pub fn beta_enabled(&self) -> bool {
        !(self.ablation.no_mi || self.ablation.no_mi_topology)
    }

    pub fn gamma_enabled(&self) -> bool {
        !(self.ablation.no_mi || self.ablation.no_mi_topology)
    }
}

/// Fixed per-run structures shared by every training step.
pub struct ModelContext {
    /// Metapath operators; absent when the encoder is bypassed.
    pub inputs: Option<EncoderInputs>,
    pub phi: BipartitePhi,
    pub phik_norm: Rc<SparseMatrix>,
    pub phik_norm_t: Rc<SparseMatrix>,
    pub recon_edges: Rc<Vec<(usize, usize)>>,
    pub user_count: usize,
    pub item_count: usize,
}

impl ModelContext {
    pub fn build(train: &HeteroGraph, cfg: &TrainConfig) -> Result<ModelContext> {
        let inputs = if cfg.ablation.no_hetero {
            None
        } else {
            Some(EncoderInputs::build(
                train,
                &cfg.enabled_metapaths_checked()?,
                cfg.degree_cap,
            )?)
        };
        let phi = infomax::build_phi(train);
        let phik = infomax::build_k_adj(&phi.phi, cfg.k)?;
        let phik_norm = Rc::new(infomax::row_normalize(&phik));
        let phik_norm_t = Rc::new(phik_norm.transpose());
        let recon_edges = Rc::new(infomax::interaction_edges(train));
        Ok(ModelContext {
            inputs,
            phi,
            phik_norm,
            phik_norm_t,
            recon_edges,
            user_count: train.user_count,
            item_count: train.item_count,
        })
    }
}

/// Raw per-term loss values; disabled terms are exactly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub bpr: f64,
    pub l2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub struct StepOutputs {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    pub fused: FusedVars,
}

/// Builds the full forward graph for one batch and returns the joint loss:
/// BPR + lambda0 ||Theta||^2 + lambda_a L_a + lambda_b L_b + lambda_g L_g.
pub fn joint_loss(
    tape: &mut Tape,
    params: &ModelParams,
    ctx: &ModelContext,
    cfg: &TrainConfig,
    batch: Rc<Vec<BprTriple>>,
    corruption: Rc<Vec<usize>>,
) -> Result<(StepOutputs, ModelVars)> {
    let vars = ModelVars::load(tape, params);

    let fused = if cfg.ablation.no_hetero {
        let ones = |n: usize| DenseMatrix::from_vec(n, 1, vec![1.0; n]).expect("shape");
        FusedVars {
            users: vars.encoder.user_base,
            items: vars.encoder.item_base,
            user_weights: ones(ctx.user_count),
            item_weights: ones(ctx.item_count),
        }
    } else {
        let inputs = ctx
            .inputs
            .as_ref()
            .ok_or_else(|| SminError::Config("encoder inputs missing".into()))?;
        encoder::forward(tape, &vars.encoder, inputs, cfg.ablation.mean_pool)?
    };

    let bpr = tape.bpr_loss(batch, fused.users, fused.items)?;

    let mut l2: Option<Var> = None;
    for (_, var) in vars.named(params) {
        let ss = tape.sum_squares(var);
        l2 = Some(match l2 {
            Some(acc) => tape.add(acc, ss)?,
            None => ss,
        });
    }
    let l2 = l2.expect("at least one tensor");

    let nodes = ctx.user_count + ctx.item_count;
    let corruptible = nodes > 1;
    let mut alpha_on = cfg.alpha_enabled();
    let mut beta_on = cfg.beta_enabled();
    let gamma_on = cfg.gamma_enabled();
    if (alpha_on || beta_on) && !corruptible {
        eprintln!("warning: single-node graph, corruption-based losses skipped");
        alpha_on = false;
        beta_on = false;
    }

    let mut alpha: Option<Var> = None;
    let mut beta: Option<Var> = None;
    let mut gamma: Option<Var> = None;
    if alpha_on || beta_on || gamma_on {
        let h_all = tape.concat_rows(&[fused.users, fused.items])?;
        let y = infomax::gcn_embed(tape, &ctx.phi.normalized, h_all, vars.infomax.gcn_w)?;
        let y_corrupt = if alpha_on || beta_on {
            let shuffled = tape.permute_rows(corruption, h_all)?;
            Some(infomax::gcn_embed(
                tape,
                &ctx.phi.normalized,
                shuffled,
                vars.infomax.gcn_w,
            )?)
        } else {
            None
        };
        let z = if alpha_on || gamma_on {
            Some(infomax::global_context(
                tape,
                &ctx.phik_norm,
                &ctx.phik_norm_t,
                y,
            )?)
        } else {
            None
        };
        if alpha_on {
            alpha = Some(infomax::loss_alpha(
                tape,
                y,
                z.expect("built above"),
                y_corrupt.expect("built above"),
                vars.infomax.w_alpha,
            )?);
        }
        if beta_on {
            beta = Some(infomax::loss_beta(
                tape,
                y,
                h_all,
                y_corrupt.expect("built above"),
                vars.infomax.w_beta,
            )?);
        }
        if gamma_on {
            gamma = Some(infomax::loss_gamma(
                tape,
                z.expect("built above"),
                ctx.recon_edges.clone(),
            )?);
        }
    }

    let mut total = bpr;
    let l2_scaled = tape.scale(l2, cfg.lambda0);
    total = tape.add(total, l2_scaled)?;
    for (term, lambda) in [
        (alpha, cfg.lambda_alpha),
        (beta, cfg.lambda_beta),
        (gamma, cfg.lambda_gamma),
    ] {
        if let Some(t) = term {
            let scaled = tape.scale(t, lambda);
            total = tape.add(total, scaled)?;
        }
    }

    let breakdown = LossBreakdown {
        total: tape.value(total).item(),
        bpr: tape.value(bpr).item(),
        l2: tape.value(l2).item(),
        alpha: alpha.map_or(0.0, |v| tape.value(v).item()),
        beta: beta.map_or(0.0, |v| tape.value(v).item()),
        gamma: gamma.map_or(0.0, |v| tape.value(v).item()),
    };
    if !breakdown.total.is_finite() {
        return Err(SminError::Numeric(format!(
            "non-finite joint loss: {breakdown:?}"
        )));
    }
    Ok((
        StepOutputs {
            loss: total,
            breakdown,
            fused,
        },
        vars,
    ))
}

/// Raw ranking score: inner product of fused user and item embeddings.
pub fn score(user: usize, item: usize, fused: &FusedEmbeddings) -> Result<f64> {
    if user >= fused.users.rows() || item >= fused.items.rows() {
        return Err(SminError::Domain(format!(
            "score index ({user},{item}) out of range"
        )));
    }
    Ok(fused
        .users
        .row(user)
        .iter()
        .zip(fused.items.row(item))
        .map(|(&a, &b)| a * b)
        .sum())
}

/// Mean of -ln sigmoid(score(u,p) - score(u,n)) over a batch, value level.
pub fn bpr_batch_loss(batch: &[BprTriple], fused: &FusedEmbeddings) -> Result<f64> {
    let mut tape = Tape::new();
    let u = tape.leaf(fused.users.clone());
    let v = tape.leaf(fused.items.clone());
    let l = tape.bpr_loss(Rc::new(batch.to_vec()), u, v)?;
    Ok(tape.value(l).item())
}

/// Samples `batch_size` positives uniformly from the train interactions (without
/// replacement within the batch; with replacement when the batch exceeds the
/// interaction count), pairing each with `neg_per_pos` uniform non-interacted
/// items.
pub fn sample_bpr_batch(
    train: &HeteroGraph,
    batch_size: usize,
    neg_per_pos: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BprTriple>> {
    let positives: Vec<(usize, usize)> = train
        .interactions
        .iter()
        .map(|(u, v, _)| (u, v))
        .collect();
    if positives.is_empty() {
        return Err(SminError::EmptyData("no train interactions to sample".into()));
    }
    let chosen: Vec<(usize, usize)> = if batch_size <= positives.len() {
        let mut idx: Vec<usize> = (0..positives.len()).collect();
        for i in 0..batch_size {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        idx[..batch_size].iter().map(|&i| positives[i]).collect()
    } else {
        (0..batch_size)
            .map(|_| positives[rng.gen_range(0..positives.len())])
            .collect()
    };

    let items = train.item_count;
    let mut out = Vec::with_capacity(chosen.len() * neg_per_pos);
    for (u, pos) in chosen {
        let interacted = train.user_items(u);
        if interacted.len() >= items {
            return Err(SminError::Sampling {
                user: u,
                msg: "user interacted with every item, no negative exists".into(),
            });
        }
        for _ in 0..neg_per_pos {
            let neg = if interacted.len() * 2 >= items {
                // Dense user: enumerate the eligible complement once.
                let eligible: Vec<usize> = (0..items)
                    .filter(|c| interacted.binary_search(c).is_err())
                    .collect();
                eligible[rng.gen_range(0..eligible.len())]
            } else {
                loop {
                    let cand = rng.gen_range(0..items);
                    if interacted.binary_search(&cand).is_err() {
                        break cand;
                    }
                }
            };
            out.push((u, pos, neg));
        }
    }
    Ok(out)
}

pub fn sample_bpr_batch_seeded(
    train: &HeteroGraph,
    batch_size: usize,
    neg_per_pos: usize,
    seed: u64,
) -> Result<Vec<BprTriple>> {
    sample_bpr_batch(train, batch_size, neg_per_pos, &mut rng_for(seed, "batches"))
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean: LossBreakdown,
}

pub struct TrainState {
    pub params: ModelParams,
    pub adam: Vec<AdamState>,
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Full training loop. `on_epoch` runs after every epoch (checkpointing hook);
/// aborting on a non-finite loss leaves the last completed epoch's checkpoint
/// as the most recent one written.
pub fn train(
    train_graph: &HeteroGraph,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    let ctx = ModelContext::build(train_graph, cfg)?;
    let params = ModelParams::init(
        cfg.d,
        cfg.layers,
        &cfg.enabled_metapaths(),
        train_graph.user_count,
        train_graph.item_count,
        cfg.seed,
    )?;
    let adam = params
        .tensors()
        .iter()
        .map(|(_, t)| AdamState::new(t.rows(), t.cols()))
        .collect();
    let mut state = TrainState {
        params,
        adam,
        epoch: 0,
        history: Vec::new(),
    };

    let mut rng_batches = rng_for(cfg.seed, "batches");
    let mut rng_corrupt = rng_for(cfg.seed, "corruption");
    let nnz = train_graph.interaction_count();
    let batches_per_epoch = nnz.div_ceil(cfg.batch_size).max(1);
    let nodes = train_graph.user_count + train_graph.item_count;

    for epoch in 0..cfg.epochs {
        let lr_epoch = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        let mut sums = LossBreakdown::default();
        for _ in 0..batches_per_epoch {
            let batch = Rc::new(sample_bpr_batch(
                train_graph,
                cfg.batch_size,
                cfg.neg_per_pos,
                &mut rng_batches,
            )?);
            let perm = Rc::new(infomax::corruption_permutation(nodes, &mut rng_corrupt));
            let mut tape = Tape::new();
            let (outputs, vars) = joint_loss(&mut tape, &state.params, &ctx, cfg, batch, perm)
                .map_err(|e| {
                    SminError::Numeric(format!(
                        "aborted at epoch {epoch}: {e}; last good checkpoint is epoch {}",
                        state.epoch
                    ))
                })?;
            let grads = tape.backward(outputs.loss)?;
            let named_vars = vars.named(&state.params);
            for (((_, var), (_, param)), adam) in named_vars
                .iter()
                .zip(state.params.tensors_mut())
                .zip(state.adam.iter_mut())
            {
                let (r, c) = (param.rows(), param.cols());
                let grad = grads.get_or_zeros(*var, r, c);
                adam_step(param, &grad, adam, lr_epoch)?;
            }
            sums.total += outputs.breakdown.total;
            sums.bpr += outputs.breakdown.bpr;
            sums.l2 += outputs.breakdown.l2;
            sums.alpha += outputs.breakdown.alpha;
            sums.beta += outputs.breakdown.beta;
            sums.gamma += outputs.breakdown.gamma;
        }
        let b = batches_per_epoch as f64;
        state.epoch = epoch + 1;
        state.history.push(EpochStats {
            epoch: epoch + 1,
            lr: lr_epoch,
            mean: LossBreakdown {
                total: sums.total / b,
                bpr: sums.bpr / b,
                l2: sums.l2 / b,
                alpha: sums.alpha / b,
                beta: sums.beta / b,
                gamma: sums.gamma / b,
            },
        });
        on_epoch(&state)?;
    }
    Ok(state)
}

/// Fused embeddings for a trained parameter set (the prediction path).
pub fn fused_embeddings(
    params: &ModelParams,
    ctx: &ModelContext,
    cfg: &TrainConfig,
) -> Result<FusedEmbeddings> {
    if cfg.ablation.no_hetero {
        return Ok(encoder::bypass_values(&params.encoder));
    }
    let inputs = ctx
        .inputs
        .as_ref()
        .ok_or_else(|| SminError::Config("encoder inputs missing".into()))?;
    encoder::forward_values(&params.encoder, inputs, cfg.ablation.mean_pool)
}

/// Verifies analytic gradients of the joint loss against central differences
/// for every parameter tensor.
pub fn finite_diff_joint_loss(
    params: &ModelParams,
    ctx: &ModelContext,
    cfg: &TrainConfig,
    batch: &Rc<Vec<BprTriple>>,
    corruption: &Rc<Vec<usize>>,
    step: f64,
) -> Result<FdReport> {
    let mut tape = Tape::new();
    let (outputs, vars) = joint_loss(&mut tape, params, ctx, cfg, batch.clone(), corruption.clone())?;
    let grads = tape.backward(outputs.loss)?;
    let analytic = vars.collect_gradients(&tape, &grads, params);

    let mut tensors = params.to_named();
    let mut scratch = params.clone();
    finite_diff_check(
        &mut tensors,
        |named| {
            scratch.set_from_named(named)?;
            let mut t = Tape::new();
            let (o, _) = joint_loss(&mut t, &scratch, ctx, cfg, batch.clone(), corruption.clone())?;
            Ok(t.value(o.loss).item())
        },
        &analytic,
        step,
    )
}
