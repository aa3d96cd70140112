//! Define-by-run reverse-mode autodiff over [`Matrix`] values.
//!
//! Every forward pass records onto a fresh [`Tape`]. Operations append a node
//! holding their output and enough context to run the backward rule; node
//! ids are therefore already in topological order and [`Tape::backward`]
//! visits them once, in reverse.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{NormalizedAdjacency, SparsePattern};
use crate::matrix::{self, Matrix};
use crate::scalar::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    #[inline]
    pub fn id(self) -> usize {
        self.id
    }

    #[inline]
    pub fn rows(self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// A trainable matrix. Cloning is cheap; updates copy on write, so a cloned
/// model keeps the values it had when cloned.
#[derive(Debug, Clone)]
pub struct Param<T>(Rc<Matrix<T>>);

impl<T: Real> Param<T> {
    pub fn new(value: Matrix<T>) -> Self {
        Param(Rc::new(value))
    }

    pub fn value(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn make_mut(&mut self) -> &mut Matrix<T> {
        Rc::make_mut(&mut self.0)
    }

    pub fn set(&mut self, value: Matrix<T>) {
        self.0 = Rc::new(value);
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }
}

/// Statistics used by [`Tape::group_norm`], one row per group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats<T> {
    pub mean: Matrix<T>,
    /// Population variance (before `eps` is added).
    pub var: Matrix<T>,
}

#[derive(Debug, Clone)]
pub enum GroupNormMode<T> {
    /// Normalize with statistics of the current batch; `eps` is added to the
    /// variance inside the square root.
    Batch { eps: T },
    /// Batch statistics with `1/max(σ, floor)` in place of `1/sqrt(σ² + eps)`,
    /// so that an already standardized input maps to itself.
    Standardize { floor: T },
    /// Normalize with fixed (running) statistics.
    Fixed { mean: Matrix<T>, inv_std: Matrix<T> },
}

enum Op<T> {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Mul(Tensor, Tensor),
    AddRow(Tensor, Tensor),
    MulCol(Tensor, Tensor),
    Scale(Tensor, T),
    Sum(Tensor),
    Relu(Tensor),
    LeakyRelu(Tensor, T),
    Dropout(Tensor, Vec<T>),
    RowSoftmax(Tensor),
    Spmm(NormalizedAdjacency<T>, Tensor),
    EdgeLogits { pattern: Rc<SparsePattern>, h: Tensor, a: Tensor },
    EdgeSoftmax(Rc<SparsePattern>, Tensor),
    EdgeSpmm { pattern: Rc<SparsePattern>, weights: Tensor, h: Tensor },
    GroupNorm {
        h: Tensor,
        s: Tensor,
        gamma: Tensor,
        beta: Tensor,
        mean: Matrix<T>,
        inv_std: Matrix<T>,
        batch: bool,
        /// Entries whose σ hit the floor; their scale is a constant.
        floored: Vec<bool>,
        skip: Option<T>,
    },
    CrossEntropy { logits: Tensor, targets: Vec<(usize, usize)> },
}

struct Node<T> {
    value: Rc<Matrix<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(usize, Tensor)>,
    checked: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// New tape; non-finite detection is on in debug builds.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: Vec::new(), checked: cfg!(debug_assertions) }
    }

    pub fn with_checks(mut self, checked: bool) -> Self {
        self.checked = checked;
        self
    }

    pub fn checked(&self) -> bool {
        self.checked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: Tensor) -> &Matrix<T> {
        &self.nodes[t.id].value
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    /// Scalar value of a 1×1 tensor.
    pub fn scalar(&self, t: Tensor) -> T {
        self.value(t).get(0, 0)
    }

    fn push(&mut self, op_name: &'static str, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Result<Tensor> {
        if self.checked && !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let t = Tensor { id: self.nodes.len(), rows: value.rows(), cols: value.cols() };
        self.nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Ok(t)
    }

    fn rg(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    pub fn leaf(&mut self, value: Matrix<T>, requires_grad: bool) -> Result<Tensor> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Result<Tensor> {
        self.leaf(value, false)
    }

    /// Records a shared constant without copying it.
    pub fn constant_shared(&mut self, value: Rc<Matrix<T>>) -> Result<Tensor> {
        if self.checked && !value.all_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        let t = Tensor { id: self.nodes.len(), rows: value.rows(), cols: value.cols() };
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Ok(t)
    }

    /// Records a trainable leaf; its gradient is retrievable through
    /// [`Gradients::param`].
    pub fn param(&mut self, p: &Param<T>) -> Result<Tensor> {
        if self.checked && !p.0.all_finite() {
            return Err(Error::NonFinite { op: "param" });
        }
        let t = Tensor { id: self.nodes.len(), rows: p.0.rows(), cols: p.0.cols() };
        self.nodes.push(Node { value: Rc::clone(&p.0), op: Op::Leaf, requires_grad: true });
        self.params.push((p.key(), t));
        Ok(t)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let v = matrix::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", v, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        same_shape("add", a, b)?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push("add", v, Op::Add(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        same_shape("mul", a, b)?;
        let mut v = self.value(a).clone();
        for (x, &y) in v.as_mut_slice().iter_mut().zip(self.value(b).as_slice()) {
            *x *= y;
        }
        let rg = self.rg(a) || self.rg(b);
        self.push("mul", v, Op::Mul(a, b), rg)
    }

    /// `x + 1·b` where `b` is a single row broadcast over all rows of `x`.
    pub fn add_row(&mut self, x: Tensor, b: Tensor) -> Result<Tensor> {
        if b.rows != 1 || b.cols != x.cols {
            return Err(shape_err("add_row", x, b));
        }
        let mut v = self.value(x).clone();
        let row = self.value(b).as_slice().to_vec();
        for r in 0..v.rows() {
            for (d, &s) in v.row_mut(r).iter_mut().zip(&row) {
                *d += s;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        self.push("add_row", v, Op::AddRow(x, b), rg)
    }

    /// Scales row `v` of `x` by `s[v]`, where `s` is a single column.
    pub fn mul_col(&mut self, x: Tensor, s: Tensor) -> Result<Tensor> {
        if s.cols != 1 || s.rows != x.rows {
            return Err(shape_err("mul_col", x, s));
        }
        let mut v = self.value(x).clone();
        let col = self.value(s).as_slice().to_vec();
        for (r, &f) in col.iter().enumerate() {
            for d in v.row_mut(r) {
                *d *= f;
            }
        }
        let rg = self.rg(x) || self.rg(s);
        self.push("mul_col", v, Op::MulCol(x, s), rg)
    }

    pub fn scale(&mut self, x: Tensor, alpha: T) -> Result<Tensor> {
        let v = self.value(x).map(|e| e * alpha);
        let rg = self.rg(x);
        self.push("scale", v, Op::Scale(x, alpha), rg)
    }

    /// Sum of all entries as a 1×1 tensor.
    pub fn sum(&mut self, x: Tensor) -> Result<Tensor> {
        let v = Matrix::filled(1, 1, self.value(x).sum());
        let rg = self.rg(x);
        self.push("sum", v, Op::Sum(x), rg)
    }

    pub fn relu(&mut self, x: Tensor) -> Result<Tensor> {
        let v = self.value(x).map(|e| if e < T::zero() { T::zero() } else { e });
        let rg = self.rg(x);
        self.push("relu", v, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Tensor, slope: T) -> Result<Tensor> {
        let v = self.value(x).map(|e| if e < T::zero() { slope * e } else { e });
        let rg = self.rg(x);
        self.push("leaky_relu", v, Op::LeakyRelu(x, slope), rg)
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Tensor, p: f64, training: bool, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::param(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let src = self.value(x);
        let mut mask = Vec::with_capacity(src.len());
        for _ in 0..src.len() {
            mask.push(if rng.gen::<f64>() < p { T::zero() } else { keep });
        }
        let mut v = src.clone();
        for (e, &m) in v.as_mut_slice().iter_mut().zip(&mask) {
            *e *= m;
        }
        let rg = self.rg(x);
        self.push("dropout", v, Op::Dropout(x, mask), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn row_softmax(&mut self, x: Tensor) -> Result<Tensor> {
        let mut v = self.value(x).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        let rg = self.rg(x);
        self.push("row_softmax", v, Op::RowSoftmax(x), rg)
    }

    /// Sparse-dense product `Â · H`.
    pub fn spmm(&mut self, a: &NormalizedAdjacency<T>, h: Tensor) -> Result<Tensor> {
        if a.n() != h.rows {
            return Err(Error::shape(
                "spmm",
                format!("adjacency is {0}x{0}, features are {1}x{2}", a.n(), h.rows, h.cols),
            ));
        }
        let hv = self.value(h);
        let d = hv.cols();
        let pattern = a.pattern();
        let vals = a.values();
        let mut out = Matrix::zeros(h.rows, d);
        for r in 0..h.rows {
            let dst = out.row_mut(r);
            for (k, &c) in pattern.row_range(r).zip(pattern.row(r)) {
                let w = vals[k];
                for (o, &x) in dst.iter_mut().zip(hv.row(c)) {
                    *o += w * x;
                }
            }
        }
        let rg = self.rg(h);
        self.push("spmm", out, Op::Spmm(a.clone(), h), rg)
    }

    /// Attention logits over the entries of `pattern`: entry `(v, v')` gets
    /// `aᵀ[h_v ‖ h_v']`. Output is `nnz × 1`.
    pub fn edge_logits(&mut self, pattern: &Rc<SparsePattern>, h: Tensor, a: Tensor) -> Result<Tensor> {
        if h.rows != pattern.n() || a.rows != 2 * h.cols || a.cols != 1 {
            return Err(Error::shape(
                "edge_logits",
                format!(
                    "pattern over {} nodes, embeddings {}x{}, attention vector {}x{}",
                    pattern.n(),
                    h.rows,
                    h.cols,
                    a.rows,
                    a.cols
                ),
            ));
        }
        let (src, dst) = self.attention_scores(h, a);
        let mut out = Matrix::zeros(pattern.nnz(), 1);
        for v in 0..pattern.n() {
            for (k, &c) in pattern.row_range(v).zip(pattern.row(v)) {
                out.as_mut_slice()[k] = src[v] + dst[c];
            }
        }
        let rg = self.rg(h) || self.rg(a);
        self.push("edge_logits", out, Op::EdgeLogits { pattern: Rc::clone(pattern), h, a }, rg)
    }

    fn attention_scores(&self, h: Tensor, a: Tensor) -> (Vec<T>, Vec<T>) {
        let hv = self.value(h);
        let av = self.value(a).as_slice();
        let (a_src, a_dst) = av.split_at(h.cols);
        let dot = |row: &[T], w: &[T]| row.iter().zip(w).map(|(&x, &y)| x * y).sum::<T>();
        let src = (0..h.rows).map(|v| dot(hv.row(v), a_src)).collect();
        let dst = (0..h.rows).map(|v| dot(hv.row(v), a_dst)).collect();
        (src, dst)
    }

    /// Softmax of an `nnz × 1` edge vector within each row of `pattern`.
    pub fn edge_softmax(&mut self, pattern: &Rc<SparsePattern>, e: Tensor) -> Result<Tensor> {
        if e.rows != pattern.nnz() || e.cols != 1 {
            return Err(Error::shape(
                "edge_softmax",
                format!("{}x{} scores for {} entries", e.rows, e.cols, pattern.nnz()),
            ));
        }
        let mut v = self.value(e).clone();
        for r in 0..pattern.n() {
            softmax_in_place(&mut v.as_mut_slice()[pattern.row_range(r)]);
        }
        let rg = self.rg(e);
        self.push("edge_softmax", v, Op::EdgeSoftmax(Rc::clone(pattern), e), rg)
    }

    /// `out_v = Σ_{k in row v} w_k · h_{col(k)}` with learned entry weights.
    pub fn edge_spmm(&mut self, pattern: &Rc<SparsePattern>, weights: Tensor, h: Tensor) -> Result<Tensor> {
        if weights.rows != pattern.nnz() || weights.cols != 1 || h.rows != pattern.n() {
            return Err(Error::shape(
                "edge_spmm",
                format!(
                    "{} entries, weights {}x{}, embeddings {}x{}",
                    pattern.nnz(),
                    weights.rows,
                    weights.cols,
                    h.rows,
                    h.cols
                ),
            ));
        }
        let hv = self.value(h);
        let w = self.value(weights).as_slice();
        let mut out = Matrix::zeros(h.rows, h.cols);
        for r in 0..pattern.n() {
            let dst = out.row_mut(r);
            for (k, &c) in pattern.row_range(r).zip(pattern.row(r)) {
                for (o, &x) in dst.iter_mut().zip(hv.row(c)) {
                    *o += w[k] * x;
                }
            }
        }
        let rg = self.rg(weights) || self.rg(h);
        self.push("edge_spmm", out, Op::EdgeSpmm { pattern: Rc::clone(pattern), weights, h }, rg)
    }

    /// Soft group normalization, summed over groups:
    ///
    /// `out[v,j] = Σ_i γ[i,j] · (S[v,i]·H[v,j] − μ[i,j]) / σ[i,j] + β[i,j]`
    ///
    /// `h` is `n × d`, `s` is `n × G`, `gamma` and `beta` are `G × d`. In
    /// batch mode μ and σ² are the column mean and population variance of
    /// the masked matrix `S[:,i] ∘ H` over all `n` rows, and are returned so
    /// callers can update running estimates. A constant all-ones `s` with
    /// `G = 1` gives plain batch normalization.
    pub fn group_norm(
        &mut self,
        h: Tensor,
        s: Tensor,
        gamma: Tensor,
        beta: Tensor,
        mode: GroupNormMode<T>,
    ) -> Result<(Tensor, Option<GroupStats<T>>)> {
        self.group_norm_impl(h, s, gamma, beta, mode, None)
    }

    /// `H + λ · group_norm(H, S, γ, β)` as a single node.
    pub fn group_norm_residual(
        &mut self,
        h: Tensor,
        s: Tensor,
        gamma: Tensor,
        beta: Tensor,
        mode: GroupNormMode<T>,
        lambda: T,
    ) -> Result<(Tensor, Option<GroupStats<T>>)> {
        self.group_norm_impl(h, s, gamma, beta, mode, Some(lambda))
    }

    fn group_norm_impl(
        &mut self,
        h: Tensor,
        s: Tensor,
        gamma: Tensor,
        beta: Tensor,
        mode: GroupNormMode<T>,
        skip: Option<T>,
    ) -> Result<(Tensor, Option<GroupStats<T>>)> {
        let (n, d) = h.shape();
        let g = s.cols;
        if s.rows != n || gamma.shape() != (g, d) || beta.shape() != (g, d) {
            return Err(Error::shape(
                "group_norm",
                format!(
                    "H {}x{}, S {}x{}, gamma {}x{}, beta {}x{}",
                    n, d, s.rows, s.cols, gamma.rows, gamma.cols, beta.rows, beta.cols
                ),
            ));
        }
        if g == 0 {
            return Err(Error::param("group normalization needs at least one group"));
        }
        if n == 0 {
            return Err(Error::shape("group_norm", "empty input"));
        }
        let hv = self.value(h);
        let sv = self.value(s);
        let mut floored = Vec::new();
        let (mean, inv_std, stats, batch) = match mode {
            GroupNormMode::Batch { eps } => {
                let (mean, var) = group_moments(hv, sv);
                let inv_std = var.map(|q: T| T::one() / (q + eps).sqrt());
                (mean.clone(), inv_std, Some(GroupStats { mean, var }), true)
            }
            GroupNormMode::Standardize { floor } => {
                let (mean, var) = group_moments(hv, sv);
                floored = var.as_slice().iter().map(|&q| q.sqrt() < floor).collect();
                let inv_std = var.map(|q: T| T::one() / q.sqrt().max(floor));
                (mean.clone(), inv_std, Some(GroupStats { mean, var }), true)
            }
            GroupNormMode::Fixed { mean, inv_std } => {
                if mean.shape() != (g, d) || inv_std.shape() != (g, d) {
                    return Err(Error::shape(
                        "group_norm",
                        format!("fixed statistics are {:?}, expected {g}x{d}", mean.shape()),
                    ));
                }
                (mean, inv_std, None, false)
            }
        };
        let gv = self.value(gamma);
        let bv = self.value(beta);
        // Per group the output is scale·S·H + shift with
        // scale = γ/σ and shift = β − γμ/σ.
        let scale = Matrix::from_fn(g, d, |i, j| gv.get(i, j) * inv_std.get(i, j));
        let mut shift_total = vec![T::zero(); d];
        for i in 0..g {
            for j in 0..d {
                shift_total[j] += bv.get(i, j) - scale.get(i, j) * mean.get(i, j);
            }
        }
        let mut out = Matrix::zeros(n, d);
        for v in 0..n {
            let hr = hv.row(v);
            let dst = out.row_mut(v);
            dst.copy_from_slice(&shift_total);
            for i in 0..g {
                let sw = sv.get(v, i);
                for ((o, &x), &c) in dst.iter_mut().zip(hr).zip(scale.row(i)) {
                    *o += c * sw * x;
                }
            }
        }
        if let Some(lambda) = skip {
            for (o, &x) in out.as_mut_slice().iter_mut().zip(hv.as_slice()) {
                *o = x + lambda * *o;
            }
        }
        let rg = self.rg(h) || self.rg(s) || self.rg(gamma) || self.rg(beta);
        let t = self.push(
            "group_norm",
            out,
            Op::GroupNorm { h, s, gamma, beta, mean, inv_std, batch, floored, skip },
            rg,
        )?;
        Ok((t, stats))
    }

    /// Mean negative log-likelihood of `labels[r]` under `softmax(logits[r])`
    /// over the rows listed in `rows`.
    pub fn masked_cross_entropy(&mut self, logits: Tensor, labels: &[usize], rows: &[usize]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::param("cross-entropy mask selects no nodes"));
        }
        if labels.len() != logits.rows {
            return Err(Error::shape(
                "masked_cross_entropy",
                format!("{} labels for {} rows of logits", labels.len(), logits.rows),
            ));
        }
        let lv = self.value(logits);
        let mut total = 0.0f64;
        let mut targets = Vec::with_capacity(rows.len());
        for &r in rows {
            let y = labels[r];
            if r >= lv.rows() || y >= lv.cols() {
                return Err(Error::shape(
                    "masked_cross_entropy",
                    format!("row {r} / label {y} outside {}x{} logits", lv.rows(), lv.cols()),
                ));
            }
            let row = lv.row(r);
            total += (log_sum_exp(row) - row[y]).as_f64();
            targets.push((r, y));
        }
        let v = Matrix::filled(1, 1, T::of(total / rows.len() as f64));
        let rg = self.rg(logits);
        self.push("masked_cross_entropy", v, Op::CrossEntropy { logits, targets }, rg)
    }

    /// Reverse pass from a scalar. Gradients are retained for leaves only.
    pub fn backward(&self, loss: Tensor) -> Result<Gradients<T>> {
        if loss.shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {}x{}", loss.rows, loss.cols),
            ));
        }
        if self.nodes.is_empty() {
            return Err(Error::shape("backward", "tape is empty"));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.rg(loss) {
            grads[loss.id] = Some(Matrix::filled(1, 1, T::one()));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                leaves[id] = Some(g);
                continue;
            }
            self.backprop(node, &g, &mut grads);
        }
        Ok(Gradients { leaves, params: self.params.clone() })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix<T>>], t: Tensor, g: Matrix<T>) {
        if !self.rg(t) {
            return;
        }
        match &mut grads[t.id] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let out = &*node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.rg(a) {
                    self.accumulate(grads, a, matrix::matmul_bt(g, self.value(b)));
                }
                if self.rg(b) {
                    self.accumulate(grads, b, matrix::matmul_at(self.value(a), g));
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    let mut ga = g.clone();
                    mul_assign(&mut ga, self.value(b));
                    self.accumulate(grads, a, ga);
                }
                if self.rg(b) {
                    let mut gb = g.clone();
                    mul_assign(&mut gb, self.value(a));
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::AddRow(x, b) => {
                self.accumulate(grads, x, g.clone());
                if self.rg(b) {
                    self.accumulate(grads, b, column_sums(g));
                }
            }
            &Op::MulCol(x, s) => {
                let sv = self.value(s);
                if self.rg(x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        let f = sv.get(r, 0);
                        gx.row_mut(r).iter_mut().for_each(|e| *e *= f);
                    }
                    self.accumulate(grads, x, gx);
                }
                if self.rg(s) {
                    let xv = self.value(x);
                    let gs = Matrix::from_fn(g.rows(), 1, |r, _| dot(g.row(r), xv.row(r)));
                    self.accumulate(grads, s, gs);
                }
            }
            &Op::Scale(x, alpha) => self.accumulate(grads, x, g.map(|e| e * alpha)),
            &Op::Sum(x) => {
                let gv = g.get(0, 0);
                self.accumulate(grads, x, Matrix::filled(x.rows, x.cols, gv));
            }
            &Op::Relu(x) => {
                // Subgradient at exactly zero is taken as 1.
                let xv = self.value(x);
                let mut gx = g.clone();
                for (e, &xi) in gx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                    if xi < T::zero() {
                        *e = T::zero();
                    }
                }
                self.accumulate(grads, x, gx);
            }
            &Op::LeakyRelu(x, slope) => {
                let xv = self.value(x);
                let mut gx = g.clone();
                for (e, &xi) in gx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                    if xi < T::zero() {
                        *e *= slope;
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::Dropout(x, mask) => {
                let mut gx = g.clone();
                for (e, &m) in gx.as_mut_slice().iter_mut().zip(mask) {
                    *e *= m;
                }
                self.accumulate(grads, *x, gx);
            }
            &Op::RowSoftmax(x) => {
                let mut gx = g.clone();
                for r in 0..gx.rows() {
                    softmax_backward_in_place(gx.row_mut(r), out.row(r));
                }
                self.accumulate(grads, x, gx);
            }
            Op::Spmm(a, h) => {
                // dH = Âᵀ · dC
                let pattern = a.pattern();
                let vals = a.values();
                let mut gh = Matrix::zeros(h.rows, h.cols);
                for r in 0..pattern.n() {
                    let gr = g.row(r);
                    for (k, &c) in pattern.row_range(r).zip(pattern.row(r)) {
                        let w = vals[k];
                        for (d, &x) in gh.row_mut(c).iter_mut().zip(gr) {
                            *d += w * x;
                        }
                    }
                }
                self.accumulate(grads, *h, gh);
            }
            Op::EdgeLogits { pattern, h, a } => {
                let n = pattern.n();
                let gs = g.as_slice();
                let mut d_src = vec![T::zero(); n];
                let mut d_dst = vec![T::zero(); n];
                for v in 0..n {
                    for (k, &c) in pattern.row_range(v).zip(pattern.row(v)) {
                        d_src[v] += gs[k];
                        d_dst[c] += gs[k];
                    }
                }
                let hv = self.value(*h);
                let av = self.value(*a).as_slice();
                let dh = h.cols;
                if self.rg(*h) {
                    let (a_src, a_dst) = av.split_at(dh);
                    let gh = Matrix::from_fn(n, dh, |v, j| d_src[v] * a_src[j] + d_dst[v] * a_dst[j]);
                    self.accumulate(grads, *h, gh);
                }
                if self.rg(*a) {
                    let mut ga = Matrix::zeros(2 * dh, 1);
                    let gas = ga.as_mut_slice();
                    for v in 0..n {
                        for (j, &x) in hv.row(v).iter().enumerate() {
                            gas[j] += d_src[v] * x;
                            gas[dh + j] += d_dst[v] * x;
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
            }
            Op::EdgeSoftmax(pattern, e) => {
                let mut ge = g.clone();
                for r in 0..pattern.n() {
                    let range = pattern.row_range(r);
                    softmax_backward_in_place(&mut ge.as_mut_slice()[range.clone()], &out.as_slice()[range]);
                }
                self.accumulate(grads, *e, ge);
            }
            Op::EdgeSpmm { pattern, weights, h } => {
                let hv = self.value(*h);
                let wv = self.value(*weights).as_slice();
                if self.rg(*weights) {
                    let mut gw = Matrix::zeros(pattern.nnz(), 1);
                    for r in 0..pattern.n() {
                        for (k, &c) in pattern.row_range(r).zip(pattern.row(r)) {
                            gw.as_mut_slice()[k] = dot(g.row(r), hv.row(c));
                        }
                    }
                    self.accumulate(grads, *weights, gw);
                }
                if self.rg(*h) {
                    let mut gh = Matrix::zeros(h.rows, h.cols);
                    for r in 0..pattern.n() {
                        let gr = g.row(r);
                        for (k, &c) in pattern.row_range(r).zip(pattern.row(r)) {
                            for (d, &x) in gh.row_mut(c).iter_mut().zip(gr) {
                                *d += wv[k] * x;
                            }
                        }
                    }
                    self.accumulate(grads, *h, gh);
                }
            }
            Op::GroupNorm { h, s, gamma, beta, mean, inv_std, batch, floored, skip } => {
                match *skip {
                    Some(lambda) => {
                        self.accumulate(grads, *h, g.clone());
                        let scaled = g.map(|e| e * lambda);
                        self.group_norm_backward(&scaled, *h, *s, *gamma, *beta, mean, inv_std, *batch, floored, grads);
                    }
                    None => self.group_norm_backward(g, *h, *s, *gamma, *beta, mean, inv_std, *batch, floored, grads),
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let coef = g.get(0, 0) / T::of(targets.len() as f64);
                let mut gl = Matrix::zeros(lv.rows(), lv.cols());
                for &(r, y) in targets {
                    let dst = gl.row_mut(r);
                    dst.copy_from_slice(lv.row(r));
                    softmax_in_place(dst);
                    dst[y] -= T::one();
                    dst.iter_mut().for_each(|e| *e *= coef);
                }
                self.accumulate(grads, *logits, gl);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn group_norm_backward(
        &self,
        g: &Matrix<T>,
        h: Tensor,
        s: Tensor,
        gamma: Tensor,
        beta: Tensor,
        mean: &Matrix<T>,
        inv_std: &Matrix<T>,
        batch: bool,
        floored: &[bool],
        grads: &mut [Option<Matrix<T>>],
    ) {
        let hv = self.value(h);
        let sv = self.value(s);
        let gv = self.value(gamma);
        let (n, d) = h.shape();
        let groups = s.cols;
        let nf = T::of(n as f64);

        // Column sums over nodes, per group: Σ g, Σ g·x̂.
        let mut sum_g = Matrix::zeros(groups, d);
        let mut sum_gx = Matrix::zeros(groups, d);
        let mut col_g = vec![T::zero(); d];
        for v in 0..n {
            let hr = hv.row(v);
            let gr = g.row(v);
            for (c, &x) in col_g.iter_mut().zip(gr) {
                *c += x;
            }
            for i in 0..groups {
                let sw = sv.get(v, i);
                let mr = mean.row(i);
                let ir = inv_std.row(i);
                let sgx = sum_gx.row_mut(i);
                for j in 0..d {
                    let xhat = (sw * hr[j] - mr[j]) * ir[j];
                    sgx[j] += gr[j] * xhat;
                }
            }
        }
        for i in 0..groups {
            sum_g.row_mut(i).copy_from_slice(&col_g);
        }
        if self.rg(gamma) {
            self.accumulate(grads, gamma, sum_gx.clone());
        }
        if self.rg(beta) {
            self.accumulate(grads, beta, sum_g.clone());
        }
        let need_h = self.rg(h);
        let need_s = self.rg(s);
        if !need_h && !need_s {
            return;
        }
        // dL/dx for x = S[v,i]·H[v,j]:
        //   batch: γ/σ · (g − Σg/n − x̂·Σ(g·x̂)/n)
        //   fixed: γ/σ · g
        let coef = Matrix::from_fn(groups, d, |i, j| gv.get(i, j) * inv_std.get(i, j));
        let mut gh = Matrix::zeros(n, d);
        let mut gs = Matrix::zeros(n, groups);
        for v in 0..n {
            let hr = hv.row(v);
            let gr = g.row(v);
            for i in 0..groups {
                let sw = sv.get(v, i);
                let mr = mean.row(i);
                let ir = inv_std.row(i);
                let cr = coef.row(i);
                let mut ds = T::zero();
                let ghr = gh.row_mut(v);
                for j in 0..d {
                    let dx = if batch {
                        let xhat = (sw * hr[j] - mr[j]) * ir[j];
                        let spread = if floored.get(i * d + j) == Some(&true) {
                            T::zero()
                        } else {
                            xhat * sum_gx.get(i, j) / nf
                        };
                        cr[j] * (gr[j] - sum_g.get(i, j) / nf - spread)
                    } else {
                        cr[j] * gr[j]
                    };
                    ghr[j] += dx * sw;
                    ds += dx * hr[j];
                }
                gs.set(v, i, ds);
            }
        }
        if need_h {
            self.accumulate(grads, h, gh);
        }
        if need_s {
            self.accumulate(grads, s, gs);
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    leaves: Vec<Option<Matrix<T>>>,
    params: Vec<(usize, Tensor)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf tensor; `None` if the loss does not depend on it.
    pub fn get(&self, t: Tensor) -> Option<&Matrix<T>> {
        self.leaves.get(t.id).and_then(|g| g.as_ref())
    }

    /// Gradient accumulated over every binding of `p` on the tape.
    pub fn param(&self, p: &Param<T>) -> Option<Matrix<T>> {
        let key = p.key();
        let mut acc: Option<Matrix<T>> = None;
        for &(k, t) in &self.params {
            if k != key {
                continue;
            }
            if let Some(g) = self.get(t) {
                match &mut acc {
                    Some(a) => a.add_assign(g),
                    None => acc = Some(g.clone()),
                }
            }
        }
        acc
    }
}

fn same_shape(op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a, b));
    }
    Ok(())
}

fn shape_err(op: &'static str, a: Tensor, b: Tensor) -> Error {
    Error::shape(op, format!("incompatible shapes {}x{} and {}x{}", a.rows, a.cols, b.rows, b.cols))
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn mul_assign<T: Real>(a: &mut Matrix<T>, b: &Matrix<T>) {
    for (x, &y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x *= y;
    }
}

fn column_sums<T: Real>(g: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &x) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let Some(max) = xs.iter().copied().reduce(T::max) else { return };
    let mut total = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Per-group column mean and population variance of `S[:, i] ∘ H`.
fn group_moments<T: Real>(hv: &Matrix<T>, sv: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    let (n, d) = hv.shape();
    let g = sv.cols();
    let nf = T::of(n as f64);
    let mut mean = Matrix::zeros(g, d);
    for v in 0..n {
        let hr = hv.row(v);
        for i in 0..g {
            let sw = sv.get(v, i);
            for (m, &x) in mean.row_mut(i).iter_mut().zip(hr) {
                *m += sw * x;
            }
        }
    }
    mean.as_mut_slice().iter_mut().for_each(|m| *m /= nf);
    let mut var = Matrix::zeros(g, d);
    for v in 0..n {
        let hr = hv.row(v);
        for i in 0..g {
            let sw = sv.get(v, i);
            let mr = mean.row(i);
            for ((q, &x), &m) in var.row_mut(i).iter_mut().zip(hr).zip(mr) {
                let dev = sw * x - m;
                *q += dev * dev;
            }
        }
    }
    var.as_mut_slice().iter_mut().for_each(|q| *q /= nf);
    (mean, var)
}

/// `g ← y ∘ (g − ⟨g, y⟩)` for softmax output `y`, evaluated as
/// `y_i · Σ_j y_j (g_i − g_j)` so that a constant `g` maps to exactly zero.
fn softmax_backward_in_place<T: Real>(g: &mut [T], y: &[T]) {
    let upstream: Vec<T> = g.to_vec();
    for (i, e) in g.iter_mut().enumerate() {
        let gi = upstream[i];
        let spread: T = upstream.iter().zip(y).map(|(&gj, &yj)| yj * (gi - gj)).sum();
        *e = y[i] * spread;
    }
}

fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}
