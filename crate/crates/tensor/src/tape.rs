use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::real::Real;
use crate::sum::{self, Grid};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variable-length row groups: output row `i` aggregates the input rows
/// `indices[offsets[i]..offsets[i + 1]]`. A CSR adjacency is exactly this.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Segments {
    pub fn new(offsets: Vec<usize>, indices: Vec<usize>) -> Result<Self> {
        let ok = !offsets.is_empty()
            && offsets[0] == 0
            && offsets.windows(2).all(|w| w[0] <= w[1])
            && *offsets.last().unwrap() == indices.len();
        if !ok {
            return Err(TensorError::InvalidArgument("malformed segment offsets".into()));
        }
        Ok(Self { offsets, indices })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    MatMulInvariant(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Mul(Var, Var),
    ScaleColumnGroups(Var, Var),
    ConcatCols(Vec<Var>),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    SoftmaxRows(Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    SegmentMean(Var, Arc<Segments>),
    RowSum(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Arc<[usize]>,
        rows: Arc<[usize]>,
        probs: Tensor<T>,
    },
    BceWithLogits {
        logits: Var,
        targets: Arc<[T]>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Multiply-add counts per primitive kind.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpStats {
    pub madds: BTreeMap<&'static str, u64>,
}

impl OpStats {
    pub fn get(&self, kind: &str) -> u64 {
        self.madds.get(kind).copied().unwrap_or(0)
    }

    fn add(&mut self, kind: &'static str, n: usize) {
        *self.madds.entry(kind).or_insert(0) += n as u64;
    }
}

/// Recording of primitive tensor operations in topological order.
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
    params: Vec<Var>,
    stats: OpStats,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> TensorError {
    TensorError::ShapeMismatch { op, left, right }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            stats: OpStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stats(&self) -> &OpStats {
        &self.stats
    }

    /// Shapes of every recorded value, in recording order.
    pub fn shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes.iter().map(|n| n.value.shape())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf. Gradients are reported for every leaf created here.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push_raw(value, Op::Leaf, true);
        self.params.push(v);
        v
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        self.stats.add("matmul", m * k * n);
        let data = kernels::gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::from_vec(m, n, data)?, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul_nt", (m, k), (n, k2)));
        }
        self.stats.add("matmul_nt", m * k * n);
        let data = kernels::gemm_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul_nt", Tensor::from_vec(m, n, data)?, Op::MatMulNT(a, b), &[a, b])
    }

    /// Matrix product whose inner sums do not depend on the order of the
    /// shared index. Used when that index runs over graph nodes.
    pub fn matmul_invariant(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul_invariant", (m, k), (k2, n)));
        }
        self.stats.add("matmul_invariant", m * k * n);
        let data = sum::gemm_invariant(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(
            "matmul_invariant",
            Tensor::from_vec(m, n, data)?,
            Op::MatMulInvariant(a, b),
            &[a, b],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        self.push("add", Tensor::from_vec(sa.0, sa.1, data)?, Op::Add(a, b), &[a, b])
    }

    /// Adds the `1 x c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb != (1, sa.1) {
            return Err(shape_err("add_row", sa, sb));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_exact_mut(sa.1.max(1)) {
            for (x, &y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push("add_row", out, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push("scale", out, Op::Scale(a, c), &[a])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mul", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        self.push("mul", Tensor::from_vec(sa.0, sa.1, data)?, Op::Mul(a, b), &[a, b])
    }

    /// Multiplies column `j` of `a` by `weights[j / g]`, where `weights` is
    /// `1 x k` and `a` has `k * g` columns.
    pub fn scale_column_groups(&mut self, a: Var, weights: Var) -> Result<Var> {
        let (sa, sw) = (self.shape(a), self.shape(weights));
        if sw.0 != 1 || sw.1 == 0 || sa.1 % sw.1 != 0 {
            return Err(shape_err("scale_column_groups", sa, sw));
        }
        let group = sa.1 / sw.1;
        let w = self.value(weights).data().to_vec();
        let mut out = self.value(a).clone();
        if sa.1 > 0 {
            for row in out.data_mut().chunks_exact_mut(sa.1) {
                for (j, x) in row.iter_mut().enumerate() {
                    *x *= w[j / group];
                }
            }
        }
        self.push(
            "scale_column_groups",
            out,
            Op::ScaleColumnGroups(a, weights),
            &[a, weights],
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| TensorError::InvalidArgument("concat of nothing".into()))?;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(
            "concat_cols",
            Tensor::from_vec(rows, cols, data)?,
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let out = self.value(a).map(|x| if x >= T::ZERO { x } else { slope * x });
        self.push("leaky_relu", out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    /// Row-wise softmax, stabilized by the row maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a));
        self.push("softmax_rows", out, Op::SoftmaxRows(a), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let src = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= src.rows()) {
            return Err(TensorError::InvalidArgument(format!(
                "gather index {bad} out of range for {} rows",
                src.rows()
            )));
        }
        let out = src.select_rows(&index);
        self.push("gather_rows", out, Op::GatherRows(a, index), &[a])
    }

    /// Output row `index[i]` accumulates input row `i`; output has `rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, index: Arc<[usize]>, rows: usize) -> Result<Var> {
        let src = self.value(a);
        if index.len() != src.rows() || index.iter().any(|&i| i >= rows) {
            return Err(TensorError::InvalidArgument("bad scatter index".into()));
        }
        let cols = src.cols();
        let mut out = Tensor::zeros(rows, cols);
        for (i, &dst) in index.iter().enumerate() {
            for (o, &x) in out.row_mut(dst).iter_mut().zip(src.row(i)) {
                *o += x;
            }
        }
        self.push("scatter_add_rows", out, Op::ScatterAddRows(a, index), &[a])
    }

    /// Mean of each segment's input rows; empty segments give zero rows.
    /// The per-segment sum is order-independent.
    pub fn segment_mean(&mut self, a: Var, segments: Arc<Segments>) -> Result<Var> {
        let src = self.value(a);
        if segments.max_index().is_some_and(|m| m >= src.rows()) {
            return Err(TensorError::InvalidArgument("segment index out of range".into()));
        }
        let cols = src.cols();
        let mut out = Tensor::zeros(segments.len(), cols);
        let mut terms = Vec::new();
        for i in 0..segments.len() {
            let seg = segments.segment(i);
            if seg.is_empty() {
                continue;
            }
            let inv = 1.0 / seg.len() as f64;
            for c in 0..cols {
                terms.clear();
                terms.extend(seg.iter().map(|&j| src.get(j, c).to_f64()));
                out.set(i, c, T::from_f64(sum::invariant_sum(&terms) * inv));
            }
        }
        self.stats.add("segment_mean", segments.indices.len() * cols);
        self.push("segment_mean", out, Op::SegmentMean(a, segments), &[a])
    }

    /// `n x c -> n x 1` row sums.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let data = (0..src.rows()).map(|i| src.row(i).iter().copied().sum()).collect();
        let out = Tensor::from_vec(src.rows(), 1, data)?;
        self.push("row_sum", out, Op::RowSum(a), &[a])
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Mean softmax cross-entropy over `rows`, computed from logits with
    /// log-sum-exp stabilization.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<[usize]>, rows: Arc<[usize]>) -> Result<Var> {
        if rows.is_empty() {
            return Err(TensorError::InvalidArgument("cross entropy over an empty mask".into()));
        }
        let z = self.value(logits);
        if labels.len() != z.rows() {
            return Err(shape_err("cross_entropy", z.shape(), (labels.len(), 1)));
        }
        let mut loss = 0.0f64;
        let mut probs = Tensor::zeros(rows.len(), z.cols());
        for (r, &i) in rows.iter().enumerate() {
            if i >= z.rows() || labels[i] >= z.cols() {
                return Err(TensorError::InvalidArgument(format!(
                    "row {i} or its label is out of range"
                )));
            }
            let label = labels[i];
            let row = z.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.to_f64()));
            let denom: f64 = row.iter().map(|x| (x.to_f64() - max).exp()).sum();
            let lse = max + denom.ln();
            loss += lse - row[label].to_f64();
            for (p, x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = T::from_f64((x.to_f64() - max).exp() / denom);
            }
        }
        let value = Tensor::scalar(T::from_f64(loss / rows.len() as f64));
        self.push(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                logits,
                labels,
                rows,
                probs,
            },
            &[logits],
        )
    }

    /// Mean binary cross-entropy of an `n x 1` logit column against 0/1
    /// targets, in the overflow-free form `max(x,0) - x*y + ln(1+e^-|x|)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Arc<[T]>) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || z.rows() != targets.len() {
            return Err(shape_err("bce_with_logits", z.shape(), (targets.len(), 1)));
        }
        if targets.is_empty() {
            return Err(TensorError::InvalidArgument("empty batch".into()));
        }
        let loss: f64 = z
            .data()
            .iter()
            .zip(targets.iter())
            .map(|(&x, &y)| {
                let (x, y) = (x.to_f64(), y.to_f64());
                x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
            })
            .sum();
        let value = Tensor::scalar(T::from_f64(loss / targets.len() as f64));
        self.push(
            "bce_with_logits",
            value,
            Op::BceWithLogits { logits, targets },
            &[logits],
        )
    }

    /// Composite: `x * w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    /// Reverse sweep from the scalar `loss`. Every trainable leaf gets a
    /// gradient, zero when it does not influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss) != (1, 1) {
            return Err(TensorError::NotScalar(self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::ONE));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads)?;
        }
        let mut out = Vec::with_capacity(self.params.len());
        for &p in &self.params {
            let g = match grads.get_mut(p.0).and_then(Option::take) {
                Some(g) => g,
                None => {
                    let (r, c) = self.shape(p);
                    Tensor::zeros(r, c)
                }
            };
            if !g.is_finite() {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            out.push(g);
        }
        Ok(Gradients {
            params: self.params.clone(),
            grads: out,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) | Op::MatMulInvariant(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.shape();
                let n = bv.cols();
                if self.needs(*a) {
                    let ga = kernels::gemm_nt(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_vec(m, k, ga)?);
                }
                if self.needs(*b) {
                    let gb = kernels::gemm_tn(av.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::from_vec(k, n, gb)?);
                }
            }
            Op::MatMulNT(a, b) => {
                // out = a b^T, a: m x k, b: n x k
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.shape();
                let n = bv.rows();
                if self.needs(*a) {
                    let ga = kernels::gemm(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_vec(m, k, ga)?);
                }
                if self.needs(*b) {
                    let gb = kernels::gemm_tn(g.data(), av.data(), m, n, k);
                    self.accumulate(grads, *b, Tensor::from_vec(n, k, gb)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*bias) {
                    let cols = g.cols();
                    let mut gb = Tensor::zeros(1, cols);
                    for i in 0..g.rows() {
                        for (o, &x) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d)?);
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(g.rows(), g.cols(), d)?);
                }
            }
            Op::ScaleColumnGroups(a, w) => {
                let (av, wv) = (self.value(*a), self.value(*w));
                let cols = av.cols();
                let group = cols / wv.cols();
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for row in ga.data_mut().chunks_exact_mut(cols) {
                        for (j, x) in row.iter_mut().enumerate() {
                            *x *= wv.data()[j / group];
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*w) {
                    let mut gw = Tensor::zeros(1, wv.cols());
                    for (idx, (&gx, &ax)) in g.data().iter().zip(av.data()).enumerate() {
                        let t = (idx % cols) / group;
                        gw.data_mut()[t] += gx * ax;
                    }
                    self.accumulate(grads, *w, gw);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.needs(p) {
                        let mut gp = Tensor::zeros(r, c);
                        for i in 0..r {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += c;
                }
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&gx, &x)| if x >= T::ZERO { gx } else { gx * *slope })
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d)?);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gx, &s)| gx * s * (T::ONE - s))
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d)?);
            }
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let mut ga = Tensor::zeros(s.rows(), s.cols());
                for i in 0..s.rows() {
                    let (srow, grow) = (s.row(i), g.row(i));
                    let dot: T = srow.iter().zip(grow).map(|(&x, &y)| x * y).sum();
                    for ((o, &x), &y) in ga.row_mut(i).iter_mut().zip(srow).zip(grow) {
                        *o = x * (y - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, index) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for (i, &src) in index.iter().enumerate() {
                    for (o, &x) in ga.row_mut(src).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ScatterAddRows(a, index) => {
                let ga = g.select_rows(index);
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentMean(a, segments) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..segments.len() {
                    let seg = segments.segment(i);
                    if seg.is_empty() {
                        continue;
                    }
                    let inv = T::from_f64(1.0 / seg.len() as f64);
                    for &j in seg {
                        for (o, &x) in ga.row_mut(j).iter_mut().zip(g.row(i)) {
                            *o += x * inv;
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::RowSum(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    let gi = g.get(i, 0);
                    ga.row_mut(i).iter_mut().for_each(|x| *x = gi);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::full(r, c, g.data()[0]));
            }
            Op::CrossEntropy {
                logits,
                labels,
                rows,
                probs,
            } => {
                let (r, c) = self.shape(*logits);
                let scale = g.data()[0] / T::from_f64(rows.len() as f64);
                let mut gl = Tensor::zeros(r, c);
                for (k, &i) in rows.iter().enumerate() {
                    let out = gl.row_mut(i);
                    for (o, &p) in out.iter_mut().zip(probs.row(k)) {
                        *o += p * scale;
                    }
                    out[labels[i]] -= scale;
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.value(*logits);
                let scale = g.data()[0] / T::from_f64(targets.len() as f64);
                let d = z
                    .data()
                    .iter()
                    .zip(targets.iter())
                    .map(|(&x, &y)| (sigmoid(x) - y) * scale)
                    .collect();
                self.accumulate(grads, *logits, Tensor::from_vec(z.rows(), 1, d)?);
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

pub(crate) fn softmax_rows<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(a.rows(), a.cols());
    let mut exps = Vec::with_capacity(a.cols());
    for i in 0..a.rows() {
        let row = a.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.to_f64()));
        exps.clear();
        exps.extend(row.iter().map(|x| (x.to_f64() - max).exp()));
        let max_e = exps.iter().fold(0.0f64, |m, &e| m.max(e));
        let denom = match Grid::for_max(max_e) {
            Some(grid) => grid.restore(exps.iter().map(|&e| grid.quantize(e)).sum()),
            None => exps.iter().sum(),
        };
        for (o, &e) in out.row_mut(i).iter_mut().zip(&exps) {
            *o = T::from_f64(e / denom);
        }
    }
    out
}

/// Gradients of a scalar with respect to every trainable leaf on a tape.
#[derive(Clone, Debug)]
pub struct Gradients<T: Real = f64> {
    params: Vec<Var>,
    grads: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.params.iter().position(|&p| p == v).map(|i| &self.grads[i])
    }

    /// Gradients in the order the leaves were registered.
    pub fn as_slice(&self) -> &[Tensor<T>] {
        &self.grads
    }

    pub fn into_vec(self) -> Vec<Tensor<T>> {
        self.grads
    }
}
