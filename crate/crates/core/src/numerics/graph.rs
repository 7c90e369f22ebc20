//! Reverse-mode automatic differentiation over an explicit operation graph.
//!
//! A [`Graph`] records every operation of a forward pass as a node holding
//! its value. [`Graph::backward`] then walks the nodes in reverse creation
//! order and accumulates adjoints. All values are 2-D [`Matrix`] blocks;
//! scalars are `1×1`.
//!
//! Besides the elementwise and linear-algebra primitives the graph has a
//! few fused operations (recurrent cell, additive attention, blockwise
//! cosine similarity) whose hand-written adjoints keep node counts low for
//! the recurrent models.

use std::collections::HashMap;

use super::tensor::{matmul_nt_acc, matmul_tn_acc, Matrix, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Identifies a trainable tensor inside a parameter store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Zero-norm threshold for cosine similarity rows.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

/// Probability floor applied before the log in cross entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Softmax(Var),
    LstmCell { gates: Var, cell: Var },
    AttnScores { keys: Var, query: Var, v: Var, act: Matrix },
    AttnContext { weights: Var, values: Var },
    SelectRows { sources: Vec<Var>, pick: Vec<usize> },
    CosineBlocks { src: Var, block: usize },
    Gather { src: Var, index: Vec<usize> },
    WeightedSqErr { pred: Var, target: Matrix, weights: Matrix },
    CrossEntropy { probs: Var, labels: Vec<usize> },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// A single forward pass recorded for differentiation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` when no gradient reached it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradients for every parameter leaf that took part in the pass.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, Option<&[f64]>)> + '_ {
        self.params.iter().map(|&(id, v)| (id, self.get(v)))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Inserts a trainable leaf. Repeated calls with the same id return the
    /// same node so gradients accumulate in one place.
    pub fn param(&mut self, id: ParamId, tensor: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(tensor.to_matrix(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let r = self.req(a) || self.req(b);
        self.push(out, Op::MatMul(a, b), r)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Matrix::new(x.rows(), x.cols(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Matrix {
        let x = self.value(a);
        let data = x.as_slice().iter().map(|&p| f(p)).collect();
        Matrix::new(x.rows(), x.cols(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p + q);
        let r = self.req(a) || self.req(b);
        self.push(out, Op::Add(a, b), r)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p - q);
        let r = self.req(a) || self.req(b);
        self.push(out, Op::Sub(a, b), r)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p * q);
        let r = self.req(a) || self.req(b);
        self.push(out, Op::Mul(a, b), r)
    }

    /// Adds a `1×cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!(b.shape(), (1, x.cols()), "bias must be 1x{}", x.cols());
        let mut out = x.clone();
        let cols = x.cols();
        for r in 0..x.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.as_slice()) {
                *o += bv;
            }
        }
        debug_assert_eq!(out.cols(), cols);
        let r = self.req(a) || self.req(bias);
        self.push(out, Op::AddRow(a, bias), r)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |p| p * s);
        let r = self.req(a);
        self.push(out, Op::Scale(a, s), r)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        let r = self.req(a);
        self.push(out, Op::Sigmoid(a), r)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, tanh);
        let r = self.req(a);
        self.push(out, Op::Tanh(a), r)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |p| p.max(0.0));
        let r = self.req(a);
        self.push(out, Op::Relu(a), r)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.map(a, |p| p * p);
        let r = self.req(a);
        self.push(out, Op::Square(a), r)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).as_slice().iter().sum();
        let r = self.req(a);
        self.push(Matrix::filled(1, 1, s), Op::Sum(a), r)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a).as_slice();
        let s = x.iter().sum::<f64>() / x.len() as f64;
        let r = self.req(a);
        self.push(Matrix::filled(1, 1, s), Op::Mean(a), r)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "column slice out of range");
        let mut out = Matrix::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        let r = self.req(a);
        self.push(out, Op::SliceCols(a, start), r)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let x = self.value(p);
                assert_eq!(x.rows(), rows, "concat row mismatch");
                out.row_mut(r)[off..off + x.cols()].copy_from_slice(x.row(r));
                off += x.cols();
            }
        }
        let r = parts.iter().any(|&p| self.req(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), r)
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        let out = Matrix::new(rows, cols, x.as_slice().to_vec()).expect("reshape size mismatch");
        let r = self.req(a);
        self.push(out, Op::Reshape(a), r)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a), None);
        let r = self.req(a);
        self.push(out, Op::Softmax(a), r)
    }

    /// Row-wise softmax restricted to the first `lens[r]` columns of row `r`
    /// (at least one); the remaining entries are exactly zero.
    pub fn softmax_rows_prefix(&mut self, a: Var, lens: &[usize]) -> Var {
        let out = softmax_rows(self.value(a), Some(lens));
        let r = self.req(a);
        self.push(out, Op::Softmax(a), r)
    }

    /// Gated memory cell. `gates` holds the `[input, forget, candidate,
    /// output]` pre-activations (`B × 4h`); `cell` is the previous cell state
    /// (`B × h`). Returns `[h_new | c_new]` (`B × 2h`).
    pub fn lstm_cell(&mut self, gates: Var, cell: Var) -> Var {
        let (g, c) = (self.value(gates), self.value(cell));
        let h = c.cols();
        assert_eq!(g.cols(), 4 * h, "gate width must be 4x hidden");
        assert_eq!(g.rows(), c.rows());
        let mut out = Matrix::zeros(c.rows(), 2 * h);
        for b in 0..c.rows() {
            let gr = g.row(b);
            let cr = c.row(b);
            let orow = out.row_mut(b);
            for j in 0..h {
                let i = sigmoid(gr[j]);
                let f = sigmoid(gr[h + j]);
                let cand = tanh(gr[2 * h + j]);
                let o = sigmoid(gr[3 * h + j]);
                let cn = f * cr[j] + i * cand;
                orow[j] = o * tanh(cn);
                orow[h + j] = cn;
            }
        }
        let r = self.req(gates) || self.req(cell);
        self.push(out, Op::LstmCell { gates, cell }, r)
    }

    /// Additive attention scores. `keys` is `B × (T·A)` (projected encoder
    /// outputs per timestep), `query` is `B × A`, `v` is `1 × A`. Returns
    /// `B × T` with `s[b,t] = Σ_a v_a · tanh(keys[b,t,a] + query[b,a])`.
    pub fn attn_scores(&mut self, keys: Var, query: Var, v: Var) -> Var {
        let (k, q, w) = (self.value(keys), self.value(query), self.value(v));
        let a = q.cols();
        assert_eq!(w.shape(), (1, a));
        assert_eq!(k.rows(), q.rows());
        assert_eq!(k.cols() % a, 0);
        let t_len = k.cols() / a;
        let mut out = Matrix::zeros(q.rows(), t_len);
        let mut act = Matrix::zeros(k.rows(), k.cols());
        for b in 0..q.rows() {
            let kr = k.row(b);
            let qr = q.row(b);
            let zr = act.row_mut(b);
            for t in 0..t_len {
                let mut s = 0.0;
                for j in 0..a {
                    let z = tanh(kr[t * a + j] + qr[j]);
                    zr[t * a + j] = z;
                    s += w.as_slice()[j] * z;
                }
                out[(b, t)] = s;
            }
        }
        let r = self.req(keys) || self.req(query) || self.req(v);
        self.push(out, Op::AttnScores { keys, query, v, act }, r)
    }

    /// Attention-weighted sum over time. `weights` is `B × T`, `values` is
    /// `B × (T·m)`; returns `B × m`.
    pub fn attn_context(&mut self, weights: Var, values: Var) -> Var {
        let (w, vals) = (self.value(weights), self.value(values));
        let t_len = w.cols();
        assert_eq!(w.rows(), vals.rows());
        assert_eq!(vals.cols() % t_len, 0);
        let m = vals.cols() / t_len;
        let mut out = Matrix::zeros(w.rows(), m);
        for b in 0..w.rows() {
            let vr = vals.row(b);
            let wr = w.row(b);
            let orow = out.row_mut(b);
            for t in 0..t_len {
                let wt = wr[t];
                if wt == 0.0 {
                    continue;
                }
                for (o, &x) in orow.iter_mut().zip(&vr[t * m..(t + 1) * m]) {
                    *o += wt * x;
                }
            }
        }
        let r = self.req(weights) || self.req(values);
        self.push(out, Op::AttnContext { weights, values }, r)
    }

    /// Row `i` of the output is row `i` of `sources[pick[i]]`.
    pub fn select_rows(&mut self, sources: &[Var], pick: &[usize]) -> Var {
        let (rows, cols) = self.value(sources[0]).shape();
        assert_eq!(pick.len(), rows);
        let mut out = Matrix::zeros(rows, cols);
        for (i, &p) in pick.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.value(sources[p]).row(i));
        }
        let r = sources.iter().any(|&s| self.req(s));
        self.push(
            out,
            Op::SelectRows {
                sources: sources.to_vec(),
                pick: pick.to_vec(),
            },
            r,
        )
    }

    /// Blockwise cosine similarity. `src` is `(P·S) × M`; the output is
    /// `(P·S) × S` where rows `pS..pS+S` hold block `p`'s `S × S` cosine
    /// matrix. Rows with norm below [`COSINE_NORM_FLOOR`] have similarity 0
    /// to every other row; every diagonal entry is exactly 1.
    pub fn cosine_blocks(&mut self, src: Var, block: usize) -> Var {
        let h = self.value(src);
        assert!(block > 0 && h.rows().is_multiple_of(block), "rows must be a multiple of block");
        let (units, _) = unit_rows(h);
        let n = h.rows();
        let mut out = Matrix::zeros(n, block);
        for p in 0..n / block {
            for i in 0..block {
                let ri = p * block + i;
                for j in 0..block {
                    out[(ri, j)] = if i == j {
                        1.0
                    } else {
                        dot(units.row(ri), units.row(p * block + j))
                    };
                }
            }
        }
        let r = self.req(src);
        self.push(out, Op::CosineBlocks { src, block }, r)
    }

    /// Builds a `rows × cols` matrix whose flat entry `k` is
    /// `src.flat[index[k]]`, or zero when `index[k] == usize::MAX`.
    pub fn gather(&mut self, src: Var, rows: usize, cols: usize, index: Vec<usize>) -> Var {
        assert_eq!(index.len(), rows * cols);
        let x = self.value(src).as_slice();
        let data = index
            .iter()
            .map(|&i| if i == usize::MAX { 0.0 } else { x[i] })
            .collect();
        let out = Matrix::new(rows, cols, data).expect("gather shape");
        let r = self.req(src);
        self.push(out, Op::Gather { src, index }, r)
    }

    /// `Σ weights ⊙ (pred − target)²` as a scalar.
    pub fn weighted_sq_err(&mut self, pred: Var, target: Matrix, weights: Matrix) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape());
        assert_eq!(p.shape(), weights.shape());
        let s: f64 = p
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .zip(weights.as_slice())
            .map(|((&a, &b), &w)| w * (a - b) * (a - b))
            .sum();
        let r = self.req(pred);
        self.push(
            Matrix::filled(1, 1, s),
            Op::WeightedSqErr {
                pred,
                target,
                weights,
            },
            r,
        )
    }

    /// Mean over rows of `−ln max(probs[b, labels[b]], PROB_FLOOR)`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Var {
        let p = self.value(probs);
        assert_eq!(p.rows(), labels.len());
        let s: f64 = labels
            .iter()
            .enumerate()
            .map(|(b, &y)| -p[(b, y)].max(PROB_FLOOR).ln())
            .sum::<f64>()
            / labels.len() as f64;
        let r = self.req(probs);
        self.push(
            Matrix::filled(1, 1, s),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            r,
        )
    }

    /// Back-propagates from the scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&k, &v)| (k, v)).collect();
        params.sort();
        Gradients { grads, params }
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (n, k, m) = (x.rows(), x.cols(), y.cols());
                if self.req(*a) {
                    matmul_nt_acc(g, y.as_slice(), self.acc(grads, *a), n, m, k);
                }
                if self.req(*b) {
                    matmul_tn_acc(x.as_slice(), g, self.acc(grads, *b), n, k, m);
                }
            }
            Op::Add(a, b) => {
                self.acc_scaled(grads, *a, g, 1.0);
                self.acc_scaled(grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_scaled(grads, *a, g, 1.0);
                self.acc_scaled(grads, *b, g, -1.0);
            }
            Op::Mul(a, b) => {
                if self.req(*a) {
                    let y = self.value(*b).as_slice();
                    let ga = self.acc(grads, *a);
                    for ((d, &gv), &yv) in ga.iter_mut().zip(g).zip(y) {
                        *d += gv * yv;
                    }
                }
                if self.req(*b) {
                    let x = self.value(*a).as_slice();
                    let gb = self.acc(grads, *b);
                    for ((d, &gv), &xv) in gb.iter_mut().zip(g).zip(x) {
                        *d += gv * xv;
                    }
                }
            }
            Op::AddRow(a, bias) => {
                self.acc_scaled(grads, *a, g, 1.0);
                if self.req(*bias) {
                    let cols = out.cols();
                    let gb = self.acc(grads, *bias);
                    for row in g.chunks_exact(cols) {
                        for (d, &gv) in gb.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Scale(a, s) => self.acc_scaled(grads, *a, g, *s),
            Op::Sigmoid(a) => self.acc_unary(grads, *a, g, out.as_slice(), |y| y * (1.0 - y)),
            Op::Tanh(a) => self.acc_unary(grads, *a, g, out.as_slice(), |y| 1.0 - y * y),
            Op::Relu(a) => {
                let x = self.value(*a).as_slice();
                self.acc_unary(grads, *a, g, x, |x| if x > 0.0 { 1.0 } else { 0.0 })
            }
            Op::Square(a) => {
                let x = self.value(*a).as_slice();
                self.acc_unary(grads, *a, g, x, |x| 2.0 * x)
            }
            Op::Sum(a) => {
                if self.req(*a) {
                    for d in self.acc(grads, *a).iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                if self.req(*a) {
                    let ga = self.acc(grads, *a);
                    let s = g[0] / ga.len() as f64;
                    for d in ga.iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if self.req(*a) {
                    let src_cols = self.value(*a).cols();
                    let len = out.cols();
                    let ga = self.acc(grads, *a);
                    for (r, row) in g.chunks_exact(len).enumerate() {
                        let dst = &mut ga[r * src_cols + start..r * src_cols + start + len];
                        for (d, &gv) in dst.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let cols = out.cols();
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.req(p) {
                        let gp = self.acc(grads, p);
                        for (r, row) in g.chunks_exact(cols).enumerate() {
                            for (d, &gv) in gp[r * pc..(r + 1) * pc].iter_mut().zip(&row[off..off + pc]) {
                                *d += gv;
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::Reshape(a) => self.acc_scaled(grads, *a, g, 1.0),
            Op::Softmax(a) => {
                if self.req(*a) {
                    let cols = out.cols();
                    let y = out.as_slice();
                    let ga = self.acc(grads, *a);
                    for r in 0..out.rows() {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dotp: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..cols {
                            ga[r * cols + j] += yr[j] * (gr[j] - dotp);
                        }
                    }
                }
            }
            Op::LstmCell { gates, cell } => self.lstm_backward(*gates, *cell, out, g, grads),
            Op::AttnScores { keys, query, v, act } => {
                let (k, q, w) = (self.value(*keys), self.value(*query), self.value(*v));
                let a = q.cols();
                let t_len = out.cols();
                let mut gk = vec![0.0; k.as_slice().len()];
                let mut gq = vec![0.0; q.as_slice().len()];
                let mut gv = vec![0.0; a];
                for b in 0..q.rows() {
                    let zr = act.row(b);
                    for t in 0..t_len {
                        let gs = g[b * t_len + t];
                        if gs == 0.0 {
                            continue;
                        }
                        for j in 0..a {
                            let z = zr[t * a + j];
                            gv[j] += gs * z;
                            let dz = gs * w.as_slice()[j] * (1.0 - z * z);
                            gk[b * k.cols() + t * a + j] += dz;
                            gq[b * a + j] += dz;
                        }
                    }
                }
                self.acc_vec(grads, *keys, &gk);
                self.acc_vec(grads, *query, &gq);
                self.acc_vec(grads, *v, &gv);
            }
            Op::AttnContext { weights, values } => {
                let (w, vals) = (self.value(*weights), self.value(*values));
                let t_len = w.cols();
                let m = out.cols();
                if self.req(*weights) {
                    let gw = self.acc(grads, *weights);
                    for b in 0..w.rows() {
                        let vr = vals.row(b);
                        let gr = &g[b * m..(b + 1) * m];
                        for t in 0..t_len {
                            gw[b * t_len + t] += dot(gr, &vr[t * m..(t + 1) * m]);
                        }
                    }
                }
                if self.req(*values) {
                    let vc = vals.cols();
                    let gvals = self.acc(grads, *values);
                    for b in 0..w.rows() {
                        let gr = &g[b * m..(b + 1) * m];
                        for t in 0..t_len {
                            let wt = w[(b, t)];
                            if wt == 0.0 {
                                continue;
                            }
                            let dst = &mut gvals[b * vc + t * m..b * vc + (t + 1) * m];
                            for (d, &gv) in dst.iter_mut().zip(gr) {
                                *d += wt * gv;
                            }
                        }
                    }
                }
            }
            Op::SelectRows { sources, pick } => {
                let cols = out.cols();
                for (i, &p) in pick.iter().enumerate() {
                    let s = sources[p];
                    if self.req(s) {
                        let gs = self.acc(grads, s);
                        for (d, &gv) in gs[i * cols..(i + 1) * cols].iter_mut().zip(&g[i * cols..(i + 1) * cols]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::CosineBlocks { src, block } => {
                if self.req(*src) {
                    let h = self.value(*src);
                    let (units, norms) = unit_rows(h);
                    let m = h.cols();
                    let s = *block;
                    let mut gh = vec![0.0; h.as_slice().len()];
                    let mut du = vec![0.0; m];
                    for p in 0..h.rows() / s {
                        for i in 0..s {
                            let ri = p * s + i;
                            if norms[ri] < COSINE_NORM_FLOOR {
                                continue;
                            }
                            du.iter_mut().for_each(|d| *d = 0.0);
                            for j in 0..s {
                                if j == i {
                                    continue;
                                }
                                let rj = p * s + j;
                                let coef = g[ri * s + j] + g[rj * s + i];
                                for (d, &u) in du.iter_mut().zip(units.row(rj)) {
                                    *d += coef * u;
                                }
                            }
                            let ui = units.row(ri);
                            let proj = dot(&du, ui);
                            for c in 0..m {
                                gh[ri * m + c] += (du[c] - proj * ui[c]) / norms[ri];
                            }
                        }
                    }
                    self.acc_vec(grads, *src, &gh);
                }
            }
            Op::Gather { src, index } => {
                if self.req(*src) {
                    let gs = self.acc(grads, *src);
                    for (&i, &gv) in index.iter().zip(g) {
                        if i != usize::MAX {
                            gs[i] += gv;
                        }
                    }
                }
            }
            Op::WeightedSqErr {
                pred,
                target,
                weights,
            } => {
                if self.req(*pred) {
                    let p = self.value(*pred).as_slice();
                    let gp = self.acc(grads, *pred);
                    for (((d, &pv), &tv), &wv) in gp
                        .iter_mut()
                        .zip(p)
                        .zip(target.as_slice())
                        .zip(weights.as_slice())
                    {
                        *d += g[0] * 2.0 * wv * (pv - tv);
                    }
                }
            }
            Op::CrossEntropy { probs, labels } => {
                if self.req(*probs) {
                    let p = self.value(*probs);
                    let cols = p.cols();
                    let n = labels.len() as f64;
                    let gp = self.acc(grads, *probs);
                    for (b, &y) in labels.iter().enumerate() {
                        let pv = p[(b, y)];
                        if pv > PROB_FLOOR {
                            gp[b * cols + y] += -g[0] / (n * pv);
                        }
                    }
                }
            }
        }
    }

    fn lstm_backward(
        &self,
        gates: Var,
        cell: Var,
        out: &Matrix,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (gm, cm) = (self.value(gates), self.value(cell));
        let h = cm.cols();
        let mut g_gates = vec![0.0; gm.as_slice().len()];
        let mut g_cell = vec![0.0; cm.as_slice().len()];
        for b in 0..cm.rows() {
            let gr = gm.row(b);
            let cr = cm.row(b);
            let or = out.row(b);
            let go = &g[b * 2 * h..(b + 1) * 2 * h];
            for j in 0..h {
                let i = sigmoid(gr[j]);
                let f = sigmoid(gr[h + j]);
                let cand = tanh(gr[2 * h + j]);
                let o = sigmoid(gr[3 * h + j]);
                let tc = tanh(or[h + j]);
                let dh = go[j];
                let dc = go[h + j] + dh * o * (1.0 - tc * tc);
                let base = b * 4 * h;
                g_gates[base + j] = dc * cand * i * (1.0 - i);
                g_gates[base + h + j] = dc * cr[j] * f * (1.0 - f);
                g_gates[base + 2 * h + j] = dc * i * (1.0 - cand * cand);
                g_gates[base + 3 * h + j] = dh * tc * o * (1.0 - o);
                g_cell[b * h + j] = dc * f;
            }
        }
        self.acc_vec(grads, gates, &g_gates);
        self.acc_vec(grads, cell, &g_cell);
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> &'a mut Vec<f64> {
        let n = self.nodes[v.0].value.as_slice().len();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn acc_scaled(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], s: f64) {
        if !self.req(v) {
            return;
        }
        for (d, &gv) in self.acc(grads, v).iter_mut().zip(g) {
            *d += s * gv;
        }
    }

    fn acc_vec(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        self.acc_scaled(grads, v, g, 1.0);
    }

    /// Accumulates `g · f(aux)` into the single input of an elementwise op;
    /// `aux` is the op's input or output depending on the derivative.
    fn acc_unary(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: Var,
        g: &[f64],
        aux: &[f64],
        f: impl Fn(f64) -> f64,
    ) {
        if !self.req(a) {
            return;
        }
        let ga = self.acc(grads, a);
        for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(aux) {
            *d += gv * f(y);
        }
    }
}

/// Hyperbolic tangent through a single `exp`; absolute error stays near
/// machine epsilon, relative error grows only for |x| below ~1e-8.
#[inline]
pub fn tanh(x: f64) -> f64 {
    if x > 20.0 {
        1.0
    } else if x < -20.0 {
        -1.0
    } else {
        1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-normalised copy of each row plus the original norms; rows under
/// the norm floor become zero.
pub(crate) fn unit_rows(h: &Matrix) -> (Matrix, Vec<f64>) {
    let mut units = h.clone();
    let mut norms = Vec::with_capacity(h.rows());
    for r in 0..h.rows() {
        let n = h.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        norms.push(n);
        let row = units.row_mut(r);
        if n < COSINE_NORM_FLOOR {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    (units, norms)
}

pub(crate) fn softmax_rows(x: &Matrix, lens: Option<&[usize]>) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let n = lens.map_or(x.cols(), |l| l[r].clamp(1, x.cols()));
        let row = &x.row(r)[..n];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(r);
        let mut z = 0.0;
        for (d, &v) in o.iter_mut().zip(row) {
            *d = (v - mx).exp();
            z += *d;
        }
        for d in o[..n].iter_mut() {
            *d /= z;
        }
    }
    out
}
