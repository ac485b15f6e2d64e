//! All trainable tensors of the model, with stable names for the optimizer,
//! the gradient checker, and checkpoint files.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};

use crate::encoder::{AttentionParams, EncoderParams, EncoderVars};
use crate::error::{Result, SminError};
use crate::infomax::{InfomaxParams, InfomaxVars};
use crate::metapath::MetapathKind;
use crate::numerics::{DenseMatrix, Gradients, Tape, Var};
use crate::rng::rng_for;

/// Initial PReLU slope.
pub const INITIAL_SLOPE: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub d: usize,
    pub layers: usize,
    /// Enabled metapaths in canonical order.
    pub metapaths: Vec<MetapathKind>,
    pub encoder: EncoderParams,
    pub infomax: InfomaxParams,
}

fn uniform_matrix(
    rows: usize,
    cols: usize,
    bound: f64,
    rng: &mut impl rand::Rng,
) -> DenseMatrix {
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized data")
}

impl ModelParams {
    /// Seeded uniform initialization in [-sqrt(6/d), sqrt(6/d)]; biases start
    /// at zero, PReLU slopes at 0.25.
    pub fn init(
        d: usize,
        layers: usize,
        metapaths: &[MetapathKind],
        user_count: usize,
        item_count: usize,
        seed: u64,
    ) -> Result<ModelParams> {
        if d < 1 || layers < 1 {
            return Err(SminError::Config(format!(
                "need d >= 1 and layers >= 1, got d={d} layers={layers}"
            )));
        }
        let mut enabled: Vec<MetapathKind> = MetapathKind::ALL
            .into_iter()
            .filter(|k| metapaths.contains(k))
            .collect();
        if enabled.is_empty() {
            enabled = MetapathKind::ALL.to_vec();
        }
        let mut rng = rng_for(seed, "init");
        let bound = (6.0 / d as f64).sqrt();
        let mut mat = |rows: usize, cols: usize| uniform_matrix(rows, cols, bound, &mut rng);

        let user_base = mat(user_count, d);
        let item_base = mat(item_count, d);
        let mut prop_weights = BTreeMap::new();
        for &kind in &enabled {
            prop_weights.insert(kind, (0..layers).map(|_| mat(d, d)).collect::<Vec<_>>());
        }
        let slopes = (0..layers)
            .map(|_| DenseMatrix::scalar(INITIAL_SLOPE))
            .collect();
        let user_proj = mat((layers + 1) * d, d);
        let item_proj = mat((layers + 1) * d, d);
        let mut attention = || AttentionParams {
            w1: mat(d, d),
            b1: DenseMatrix::zeros(1, d),
            w2: mat(d, 1),
        };
        let user_attention = attention();
        let item_attention = attention();
        let infomax = InfomaxParams {
            gcn_w: mat(d, d),
            w_alpha: mat(d, d),
            w_beta: mat(d, d),
        };
        Ok(ModelParams {
            d,
            layers,
            metapaths: enabled.clone(),
            encoder: EncoderParams {
                user_base,
                item_base,
                prop_weights,
                slopes,
                user_proj,
                item_proj,
                user_attention,
                item_attention,
            },
            infomax,
        })
    }

    pub fn user_count(&self) -> usize {
        self.encoder.user_base.rows()
    }

    pub fn item_count(&self) -> usize {
        self.encoder.item_base.rows()
    }

    /// Named views of every trainable tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &DenseMatrix)> {
        let e = &self.encoder;
        let mut out: Vec<(String, &DenseMatrix)> = vec![
            ("user_base".into(), &e.user_base),
            ("item_base".into(), &e.item_base),
        ];
        for (kind, ws) in &e.prop_weights {
            for (l, w) in ws.iter().enumerate() {
                out.push((format!("w.{kind}.{l}"), w));
            }
        }
        for (l, s) in e.slopes.iter().enumerate() {
            out.push((format!("slope.{l}"), s));
        }
        out.push(("user_proj".into(), &e.user_proj));
        out.push(("item_proj".into(), &e.item_proj));
        for (tag, a) in [("user_attn", &e.user_attention), ("item_attn", &e.item_attention)] {
            out.push((format!("{tag}.w1"), &a.w1));
            out.push((format!("{tag}.b1"), &a.b1));
            out.push((format!("{tag}.w2"), &a.w2));
        }
        out.push(("infomax.w".into(), &self.infomax.gcn_w));
        out.push(("infomax.w_alpha".into(), &self.infomax.w_alpha));
        out.push(("infomax.w_beta".into(), &self.infomax.w_beta));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let e = &mut self.encoder;
        let mut out: Vec<(String, &mut DenseMatrix)> = vec![
            ("user_base".into(), &mut e.user_base),
            ("item_base".into(), &mut e.item_base),
        ];
        for (kind, ws) in &mut e.prop_weights {
            for (l, w) in ws.iter_mut().enumerate() {
                out.push((format!("w.{kind}.{l}"), w));
            }
        }
        for (l, s) in e.slopes.iter_mut().enumerate() {
            out.push((format!("slope.{l}"), s));
        }
        out.push(("user_proj".into(), &mut e.user_proj));
        out.push(("item_proj".into(), &mut e.item_proj));
        for (tag, a) in [
            ("user_attn", &mut e.user_attention),
            ("item_attn", &mut e.item_attention),
        ] {
            out.push((format!("{tag}.w1"), &mut a.w1));
            out.push((format!("{tag}.b1"), &mut a.b1));
            out.push((format!("{tag}.w2"), &mut a.w2));
        }
        out.push(("infomax.w".into(), &mut self.infomax.gcn_w));
        out.push(("infomax.w_alpha".into(), &mut self.infomax.w_alpha));
        out.push(("infomax.w_beta".into(), &mut self.infomax.w_beta));
        out
    }

    pub fn to_named(&self) -> Vec<(String, DenseMatrix)> {
        self.tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    /// Overwrites tensors from a named list (order-insensitive, shape-checked).
    pub fn set_from_named(&mut self, named: &[(String, DenseMatrix)]) -> Result<()> {
        let lookup: BTreeMap<&str, &DenseMatrix> =
            named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, tensor) in self.tensors_mut() {
            let src = lookup.get(name.as_str()).ok_or_else(|| {
                SminError::Checkpoint(format!("missing tensor '{name}'"))
            })?;
            if src.shape() != tensor.shape() {
                return Err(SminError::Checkpoint(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    src.shape(),
                    tensor.shape()
                )));
            }
            *tensor = (*src).clone();
        }
        Ok(())
    }

    pub fn total_parameters(&self) -> usize {
        self.tensors()
            .iter()
            .map(|(_, t)| t.values().len())
            .sum()
    }
}

/// Tape handles for the full parameter set, aligned with `tensors()`.
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub infomax: InfomaxVars,
}

impl ModelVars {
    pub fn load(tape: &mut Tape, params: &ModelParams) -> ModelVars {
        ModelVars {
            encoder: EncoderVars::load(tape, &params.encoder),
            infomax: InfomaxVars::load(tape, &params.infomax),
        }
    }

    /// (name, var) pairs in the same order as `ModelParams::tensors`.
    pub fn named(&self, params: &ModelParams) -> Vec<(String, Var)> {
        let e = &self.encoder;
        let mut out: Vec<(String, Var)> = vec![
            ("user_base".into(), e.user_base),
            ("item_base".into(), e.item_base),
        ];
        for (kind, ws) in &e.prop_weights {
            for (l, w) in ws.iter().enumerate() {
                out.push((format!("w.{kind}.{l}"), *w));
            }
        }
        for (l, s) in e.slopes.iter().enumerate() {
            out.push((format!("slope.{l}"), *s));
        }
        out.push(("user_proj".into(), e.user_proj));
        out.push(("item_proj".into(), e.item_proj));
        for (tag, a) in [("user_attn", &e.user_attention), ("item_attn", &e.item_attention)] {
            out.push((format!("{tag}.w1"), a.w1));
            out.push((format!("{tag}.b1"), a.b1));
            out.push((format!("{tag}.w2"), a.w2));
        }
        out.push(("infomax.w".into(), self.infomax.gcn_w));
        out.push(("infomax.w_alpha".into(), self.infomax.w_alpha));
        out.push(("infomax.w_beta".into(), self.infomax.w_beta));
        debug_assert_eq!(out.len(), params.tensors().len());
        out
    }

    /// Gradients per tensor, zeros where the loss does not reach a tensor.
    pub fn collect_gradients(
        &self,
        tape: &Tape,
        grads: &Gradients,
        params: &ModelParams,
    ) -> Vec<(String, DenseMatrix)> {
        self.named(params)
            .into_iter()
            .map(|(name, var)| {
                let (r, c) = tape.value(var).shape();
                (name, grads.get_or_zeros(var, r, c))
            })
            .collect()
    }
}
