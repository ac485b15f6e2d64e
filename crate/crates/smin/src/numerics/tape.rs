//! Minimal reverse-mode recording tape over [`DenseMatrix`].
//!
//! Every learnable operation in the model is expressed through this tape, so
//! analytic parameter gradients come from a single backward pass. Nodes are
//! appended in topological order by construction; the backward sweep walks
//! them in reverse with fixed accumulation order, which keeps gradients
//! bitwise deterministic.

use std::rc::Rc;

use crate::error::{Result, SminError};
use crate::numerics::dense::DenseMatrix;
use crate::numerics::sparse::SparseMatrix;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// (user, positive item, negative item) ranking triple.
pub type BprTriple = (usize, usize, usize);

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability clamp applied before logs in the discriminator and BPR losses.
const PROB_CLAMP: f64 = 1e-12;

fn ln_clamped(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

enum Op {
    Leaf,
    /// C = A * B
    MatMul(Var, Var),
    /// C = S * B with constant sparse S; only S^T is needed after the forward
    /// value is computed (same Rc as S when symmetric).
    SpMM {
        bwd: Rc<SparseMatrix>,
        rhs: Var,
    },
    Add(Var, Var),
    Scale(Var, f64),
    /// (n,d) + broadcast (1,d)
    AddRowVec(Var, Var),
    /// PReLU with 1x1 slope.
    Prelu(Var, Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    /// Columns [start, start+width) of the source.
    SliceCols(Var, usize, usize),
    SoftmaxRows(Var),
    /// (n,1) weights scaling the rows of an (n,d) matrix.
    ScaleRows(Var, Var),
    /// out[i] = in[perm[i]]
    PermuteRows(Rc<Vec<usize>>, Var),
    /// 1x1 sum of squared entries.
    SumSquares(Var),
    /// 1x1 mean of -ln sigmoid(score(u,p) - score(u,n)) over triples.
    BprLoss {
        triples: Rc<Vec<BprTriple>>,
        users: Var,
        items: Var,
    },
    /// 1x1 binary cross-entropy of a bilinear discriminator:
    /// positives (y_i, ctx_i), negatives (y_neg_i, ctx_i), score y W ctx^T.
    BilinearNce {
        y: Var,
        ctx: Var,
        y_neg: Var,
        w: Var,
    },
    /// 1x1 mean of (1 - z_a . z_b)^2 over fixed index pairs.
    EdgeRecon(Rc<Vec<(usize, usize)>>, Var),
}

struct Node {
    value: DenseMatrix,
    op: Op,
}

/// Gradients keyed by tape variable; absent means the loss does not depend on it.
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of the given shape when unreachable.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> DenseMatrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => DenseMatrix::zeros(rows, cols),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(DenseMatrix::scalar(value), Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn spmm(&mut self, fwd: Rc<SparseMatrix>, bwd: Rc<SparseMatrix>, rhs: Var) -> Result<Var> {
        if fwd.rows() != bwd.cols() || fwd.cols() != bwd.rows() {
            return Err(SminError::Dimension(format!(
                "spmm backward matrix {:?} is not the transpose shape of {:?}",
                bwd.shape(),
                fwd.shape()
            )));
        }
        let value = fwd.spmm(self.value(rhs))?;
        Ok(self.push(value, Op::SpMM { bwd, rhs }))
    }

    /// spmm with a symmetric sparse operand.
    pub fn spmm_sym(&mut self, sym: Rc<SparseMatrix>, rhs: Var) -> Result<Var> {
        self.spmm(sym.clone(), sym, rhs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| k * v);
        self.push(value, Op::Scale(a, k))
    }

    pub fn add_row_vec(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, d) = self.shape(a);
        if self.shape(row) != (1, d) {
            return Err(SminError::Dimension(format!(
                "add_row_vec {:?} + {:?}",
                self.shape(a),
                self.shape(row)
            )));
        }
        let mut value = self.value(a).clone();
        let rowv = self.value(row).row(0).to_vec();
        for i in 0..n {
            for (x, b) in value.row_mut(i).iter_mut().zip(&rowv) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddRowVec(a, row)))
    }

    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.shape(slope) != (1, 1) {
            return Err(SminError::Dimension("prelu slope must be 1x1".into()));
        }
        let s = self.value(slope).item();
        let value = self.value(x).map(|v| if v >= 0.0 { v } else { s * v });
        Ok(self.push(value, Op::Prelu(x, slope)))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(SminError::Dimension("concat_cols of zero parts".into()));
        }
        let n = self.shape(parts[0]).0;
        if parts.iter().any(|&p| self.shape(p).0 != n) {
            return Err(SminError::Dimension("concat_cols row count mismatch".into()));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = DenseMatrix::zeros(n, total);
        for i in 0..n {
            let out = value.row_mut(i);
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                out[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(SminError::Dimension("concat_rows of zero parts".into()));
        }
        let d = self.shape(parts[0]).1;
        if parts.iter().any(|&p| self.shape(p).1 != d) {
            return Err(SminError::Dimension("concat_rows col count mismatch".into()));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut data = Vec::with_capacity(total * d);
        for &p in parts {
            data.extend_from_slice(self.value(p).values());
        }
        let value = DenseMatrix::from_vec(total, d, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (n, d) = self.shape(a);
        if start + width > d {
            return Err(SminError::Dimension(format!(
                "slice_cols [{start}, {}) out of {d}",
                start + width
            )));
        }
        let mut value = DenseMatrix::zeros(n, width);
        for i in 0..n {
            value
                .row_mut(i)
                .copy_from_slice(&self.value(a).row(i)[start..start + width]);
        }
        Ok(self.push(value, Op::SliceCols(a, start, width)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, d) = self.shape(a);
        let mut value = DenseMatrix::zeros(n, d);
        for i in 0..n {
            let src = self.value(a).row(i);
            let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = value.row_mut(i);
            let mut sum = 0.0;
            for (o, &x) in out.iter_mut().zip(src) {
                *o = (x - m).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn scale_rows(&mut self, weights: Var, mat: Var) -> Result<Var> {
        let (n, d) = self.shape(mat);
        if self.shape(weights) != (n, 1) {
            return Err(SminError::Dimension(format!(
                "scale_rows weights {:?} vs matrix {:?}",
                self.shape(weights),
                self.shape(mat)
            )));
        }
        let mut value = self.value(mat).clone();
        for i in 0..n {
            let w = self.value(weights).get(i, 0);
            for x in value.row_mut(i) {
                *x *= w;
            }
        }
        let _ = d;
        Ok(self.push(value, Op::ScaleRows(weights, mat)))
    }

    pub fn permute_rows(&mut self, perm: Rc<Vec<usize>>, a: Var) -> Result<Var> {
        let (n, d) = self.shape(a);
        if perm.len() != n {
            return Err(SminError::Dimension(format!(
                "permutation length {} vs {} rows",
                perm.len(),
                n
            )));
        }
        let mut value = DenseMatrix::zeros(n, d);
        for (i, &src) in perm.iter().enumerate() {
            value.row_mut(i).copy_from_slice(self.value(a).row(src));
        }
        Ok(self.push(value, Op::PermuteRows(perm, a)))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(a).sum_squares());
        self.push(value, Op::SumSquares(a))
    }

    pub fn bpr_loss(&mut self, triples: Rc<Vec<BprTriple>>, users: Var, items: Var) -> Result<Var> {
        if triples.is_empty() {
            return Err(SminError::Domain("empty BPR batch".into()));
        }
        let (nu, d) = self.shape(users);
        let (nv, dv) = self.shape(items);
        if d != dv {
            return Err(SminError::Dimension("user/item embedding width differs".into()));
        }
        for &(u, p, n) in triples.iter() {
            if u >= nu || p >= nv || n >= nv {
                return Err(SminError::Dimension(format!(
                    "BPR triple ({u},{p},{n}) out of range"
                )));
            }
        }
        let hu = self.value(users);
        let hv = self.value(items);
        let mut total = 0.0;
        for &(u, p, n) in triples.iter() {
            let urow = hu.row(u);
            let diff: f64 = urow
                .iter()
                .zip(hv.row(p).iter().zip(hv.row(n)))
                .map(|(&a, (&bp, &bn))| a * (bp - bn))
                .sum();
            total -= ln_clamped(sigmoid(diff));
        }
        let value = DenseMatrix::scalar(total / triples.len() as f64);
        Ok(self.push(value, Op::BprLoss { triples, users, items }))
    }

    pub fn bilinear_nce(&mut self, y: Var, ctx: Var, y_neg: Var, w: Var) -> Result<Var> {
        let (n, d) = self.shape(y);
        if self.shape(ctx) != (n, d) || self.shape(y_neg) != (n, d) || self.shape(w) != (d, d) {
            return Err(SminError::Dimension(format!(
                "bilinear_nce shapes y{:?} ctx{:?} neg{:?} w{:?}",
                self.shape(y),
                self.shape(ctx),
                self.shape(y_neg),
                self.shape(w)
            )));
        }
        // ctx W^T rows give per-node s = y_i . (W ctx_i^T).
        let cw = self.value(ctx).matmul_nt(self.value(w))?;
        let mut total = 0.0;
        for i in 0..n {
            let sp: f64 = self.value(y).row(i).iter().zip(cw.row(i)).map(|(&a, &b)| a * b).sum();
            let sn: f64 = self
                .value(y_neg)
                .row(i)
                .iter()
                .zip(cw.row(i))
                .map(|(&a, &b)| a * b)
                .sum();
            total -= ln_clamped(sigmoid(sp)) + ln_clamped(1.0 - sigmoid(sn));
        }
        let value = DenseMatrix::scalar(total / n as f64);
        Ok(self.push(value, Op::BilinearNce { y, ctx, y_neg, w }))
    }

    pub fn edge_recon(&mut self, pairs: Rc<Vec<(usize, usize)>>, z: Var) -> Result<Var> {
        let (n, _) = self.shape(z);
        for &(a, b) in pairs.iter() {
            if a >= n || b >= n {
                return Err(SminError::Dimension(format!("edge ({a},{b}) out of range")));
            }
        }
        let zm = self.value(z);
        let mut total = 0.0;
        for &(a, b) in pairs.iter() {
            let dot: f64 = zm.row(a).iter().zip(zm.row(b)).map(|(&x, &y)| x * y).sum();
            total += (1.0 - dot) * (1.0 - dot);
        }
        let value = DenseMatrix::scalar(if pairs.is_empty() {
            0.0
        } else {
            total / pairs.len() as f64
        });
        Ok(self.push(value, Op::EdgeRecon(pairs, z)))
    }

    /// Reverse sweep from a 1x1 loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(SminError::Dimension("backward source must be 1x1".into()));
        }
        if !self.value(loss).item().is_finite() {
            return Err(SminError::Numeric("non-finite loss in backward".into()));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_op(&self.nodes[id].op, id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn add_grad(&self, grads: &mut [Option<DenseMatrix>], v: Var, contrib: DenseMatrix) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backprop_op(
        &self,
        op: &Op,
        _id: usize,
        g: &DenseMatrix,
        grads: &mut [Option<DenseMatrix>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_nt(self.value(*b))?;
                let gb = self.value(*a).matmul_tn(g)?;
                self.add_grad(grads, *a, ga);
                self.add_grad(grads, *b, gb);
            }
            Op::SpMM { bwd, rhs, .. } => {
                let gr = bwd.spmm(g)?;
                self.add_grad(grads, *rhs, gr);
            }
            Op::Add(a, b) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.clone());
            }
            Op::Scale(a, k) => {
                self.add_grad(grads, *a, g.map(|v| k * v));
            }
            Op::AddRowVec(a, row) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *row, g.column_sums());
            }
            Op::Prelu(x, slope) => {
                let xv = self.value(*x);
                let s = self.value(*slope).item();
                let mut gx = DenseMatrix::zeros(xv.rows(), xv.cols());
                let mut gs = 0.0;
                for i in 0..xv.values().len() {
                    let x0 = xv.values()[i];
                    let go = g.values()[i];
                    if x0 >= 0.0 {
                        gx.values_mut()[i] = go;
                    } else {
                        gx.values_mut()[i] = go * s;
                        gs += go * x0;
                    }
                }
                self.add_grad(grads, *x, gx);
                self.add_grad(grads, *slope, DenseMatrix::scalar(gs));
            }
            Op::Tanh(x) => {
                let y = &self.nodes[_id].value;
                let mut gx = g.clone();
                for (gv, &yv) in gx.values_mut().iter_mut().zip(y.values()) {
                    *gv *= 1.0 - yv * yv;
                }
                self.add_grad(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    let mut gp = DenseMatrix::zeros(n, w);
                    for i in 0..n {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                    }
                    off += w;
                    self.add_grad(grads, p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let d = g.cols();
                let mut off = 0;
                for &p in parts {
                    let n = self.shape(p).0;
                    let mut gp = DenseMatrix::zeros(n, d);
                    for i in 0..n {
                        gp.row_mut(i).copy_from_slice(g.row(off + i));
                    }
                    off += n;
                    self.add_grad(grads, p, gp);
                }
            }
            Op::SliceCols(a, start, width) => {
                let (n, d) = self.shape(*a);
                let mut ga = DenseMatrix::zeros(n, d);
                for i in 0..n {
                    ga.row_mut(i)[*start..start + width].copy_from_slice(g.row(i));
                }
                self.add_grad(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[_id].value;
                let (n, d) = y.shape();
                let mut ga = DenseMatrix::zeros(n, d);
                for i in 0..n {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for (o, (&yv, &gv)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - dot);
                    }
                }
                self.add_grad(grads, *a, ga);
            }
            Op::ScaleRows(weights, mat) => {
                let (n, _) = self.shape(*mat);
                let wv = self.value(*weights);
                let mv = self.value(*mat);
                let mut gw = DenseMatrix::zeros(n, 1);
                let mut gm = g.clone();
                for i in 0..n {
                    let dot: f64 = g.row(i).iter().zip(mv.row(i)).map(|(&a, &b)| a * b).sum();
                    gw.set(i, 0, dot);
                    let w = wv.get(i, 0);
                    for x in gm.row_mut(i) {
                        *x *= w;
                    }
                }
                self.add_grad(grads, *weights, gw);
                self.add_grad(grads, *mat, gm);
            }
            Op::PermuteRows(perm, a) => {
                let (n, d) = self.shape(*a);
                let mut ga = DenseMatrix::zeros(n, d);
                for (i, &src) in perm.iter().enumerate() {
                    let gr = g.row(i);
                    for (o, &v) in ga.row_mut(src).iter_mut().zip(gr) {
                        *o += v;
                    }
                }
                self.add_grad(grads, *a, ga);
            }
            Op::SumSquares(a) => {
                let scale = 2.0 * g.item();
                self.add_grad(grads, *a, self.value(*a).map(|v| scale * v));
            }
            Op::BprLoss { triples, users, items } => {
                let hu = self.value(*users);
                let hv = self.value(*items);
                let d = hu.cols();
                let mut gu = DenseMatrix::zeros(hu.rows(), d);
                let mut gv = DenseMatrix::zeros(hv.rows(), d);
                let scale = -g.item() / triples.len() as f64;
                for &(u, p, n) in triples.iter() {
                    let urow = hu.row(u);
                    let diff: f64 = urow
                        .iter()
                        .zip(hv.row(p).iter().zip(hv.row(n)))
                        .map(|(&a, (&bp, &bn))| a * (bp - bn))
                        .sum();
                    let c = scale * sigmoid(-diff);
                    for j in 0..d {
                        gu.row_mut(u)[j] += c * (hv.get(p, j) - hv.get(n, j));
                        gv.row_mut(p)[j] += c * urow[j];
                        gv.row_mut(n)[j] -= c * urow[j];
                    }
                }
                self.add_grad(grads, *users, gu);
                self.add_grad(grads, *items, gv);
            }
            Op::BilinearNce { y, ctx, y_neg, w } => {
                let yv = self.value(*y);
                let cv = self.value(*ctx);
                let nv = self.value(*y_neg);
                let wv = self.value(*w);
                let (n, d) = yv.shape();
                let cw = cv.matmul_nt(wv)?; // row i = ctx_i W^T
                let yw = yv.matmul(wv)?;
                let nw = nv.matmul(wv)?;
                let mut gy = DenseMatrix::zeros(n, d);
                let mut gc = DenseMatrix::zeros(n, d);
                let mut gn = DenseMatrix::zeros(n, d);
                let mut gw = DenseMatrix::zeros(d, d);
                let scale = g.item() / n as f64;
                for i in 0..n {
                    let sp: f64 = yv.row(i).iter().zip(cw.row(i)).map(|(&a, &b)| a * b).sum();
                    let sn: f64 = nv.row(i).iter().zip(cw.row(i)).map(|(&a, &b)| a * b).sum();
                    let gp = -scale * sigmoid(-sp);
                    let gneg = scale * sigmoid(sn);
                    for j in 0..d {
                        gy.row_mut(i)[j] += gp * cw.get(i, j);
                        gn.row_mut(i)[j] += gneg * cw.get(i, j);
                        gc.row_mut(i)[j] += gp * yw.get(i, j) + gneg * nw.get(i, j);
                    }
                    for a in 0..d {
                        let ya = gp * yv.get(i, a) + gneg * nv.get(i, a);
                        if ya != 0.0 {
                            let gw_row = gw.row_mut(a);
                            for (b, &cb) in cv.row(i).iter().enumerate() {
                                gw_row[b] += ya * cb;
                            }
                        }
                    }
                }
                self.add_grad(grads, *y, gy);
                self.add_grad(grads, *ctx, gc);
                self.add_grad(grads, *y_neg, gn);
                self.add_grad(grads, *w, gw);
            }
            Op::EdgeRecon(pairs, z) => {
                let zv = self.value(*z);
                let (n, d) = zv.shape();
                let mut gz = DenseMatrix::zeros(n, d);
                if !pairs.is_empty() {
                    let scale = 2.0 * g.item() / pairs.len() as f64;
                    for &(a, b) in pairs.iter() {
                        let dot: f64 = zv.row(a).iter().zip(zv.row(b)).map(|(&x, &y)| x * y).sum();
                        let c = scale * (dot - 1.0);
                        for j in 0..d {
                            gz.row_mut(a)[j] += c * zv.get(b, j);
                            gz.row_mut(b)[j] += c * zv.get(a, j);
                        }
                    }
                }
                self.add_grad(grads, *z, gz);
            }
        }
        Ok(())
    }
}
