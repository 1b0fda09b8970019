//! Operation recording and reverse-mode replay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Result, Tensor, TensorError};

/// Epsilon added to the variance inside the layer-norm square root.
pub const LAYERNORM_EPS: f64 = 1e-6;
/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary elementwise op maps onto the left one.
#[derive(Clone, Copy, Debug)]
enum Bcast {
    Full,
    /// `[1 × n]` repeated over every row.
    Row,
    /// `[m × 1]` repeated over every column.
    Col,
    Scalar,
}

impl Bcast {
    fn resolve(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Self> {
        if a.shape() == b.shape() {
            Ok(Self::Full)
        } else if b.numel() == 1 {
            Ok(Self::Scalar)
        } else if b.rows() == 1 && b.cols() == a.cols() {
            Ok(Self::Row)
        } else if b.cols() == 1 && b.rows() == a.rows() && a.shape().len() == 2 {
            Ok(Self::Col)
        } else {
            Err(TensorError::Shape {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        }
    }

    #[inline]
    fn index(self, i: usize, cols: usize) -> usize {
        match self {
            Self::Full => i,
            Self::Row => i % cols,
            Self::Col => i / cols,
            Self::Scalar => 0,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var, bcast: Bcast },
    Sub { a: Var, b: Var, bcast: Bcast },
    Mul { a: Var, b: Var, bcast: Bcast },
    Scale { x: Var, factor: f64 },
    Sigmoid { x: Var },
    Relu { x: Var },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Conv1d { x: Var, kernel: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Transpose { x: Var },
    MeanPool { x: Var, axis: usize },
    MaskedMeanRows { x: Var, keep: Vec<bool>, count: usize },
    SliceCols { x: Var, start: usize },
    Dropout { x: Var, scale: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    Bce { p: Var, label: f64, clamped: bool },
    Sum { x: Var },
    MeanOf { inputs: Vec<Var> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records tensor operations in execution order.
///
/// A tape is single-threaded. Build one per forward pass (or per batch),
/// call [`Tape::backward`] on a scalar, then read gradients of the leaves.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Axis {
            axis,
            shape: shape.to_vec(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn require_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(TensorError::Shape {
            op,
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut Vec<f64> {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor. Its `requires_grad` flag decides whether a
    /// gradient is stored for it by [`Tape::backward`].
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.is_trainable();
        self.nodes.push(Node {
            value: tensor,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`Tape::backward`] target with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_rank2("matmul", ta)?;
        let (k2, n) = require_rank2("matmul", tb)?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, &[a, b], Op::MatMul { a, b }))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Bcast)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let bcast = Bcast::resolve(name, ta, tb)?;
        let cols = ta.cols();
        let bd = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[bcast.index(i, cols)]))
            .collect();
        Ok((Tensor::new(ta.shape().to_vec(), data)?, bcast))
    }

    /// Elementwise sum; `b` may be a row vector, column vector, or scalar
    /// broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bcast) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, &[a, b], Op::Add { a, b, bcast }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bcast) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, &[a, b], Op::Sub { a, b, bcast }))
    }

    /// Hadamard product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bcast) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, &[a, b], Op::Mul { a, b, bcast }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, &[x], Op::Scale { x, factor })
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.unary(x, sigmoid);
        self.push(value, &[x], Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.unary(x, |v| v.max(0.0));
        self.push(value, &[x], Op::Relu { x })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_masked(x, axis, None)
    }

    /// Softmax along `axis`. Entries whose `keep` flag is false get exactly
    /// zero probability and are excluded from the normalizer, which is the
    /// same as filling them with negative infinity. A slice with no kept
    /// entries produces zeros.
    pub fn softmax_masked(&mut self, x: Var, axis: usize, keep: Option<&[bool]>) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis)?;
        if let Some(k) = keep {
            if k.len() != t.numel() {
                return Err(TensorError::Shape {
                    op: "softmax mask",
                    lhs: t.shape().to_vec(),
                    rhs: vec![k.len()],
                });
            }
        }
        let kept = |i: usize| keep.is_none_or(|k| k[i]);
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for r in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + r;
                let max = (0..len)
                    .map(idx)
                    .filter(|&j| kept(j))
                    .map(|j| src[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut total = 0.0;
                for i in 0..len {
                    let j = idx(i);
                    if kept(j) {
                        let e = (src[j] - max).exp();
                        out[j] = e;
                        total += e;
                    }
                }
                for i in 0..len {
                    out[idx(i)] /= total;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, &[x], Op::Softmax { x, axis }))
    }

    /// Normalizes every row of `x` (`len × d`) to zero mean and unit variance,
    /// then applies the per-feature `gain` and `bias` (each `d` values).
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.cols();
        for p in [gain, bias] {
            if self.value(p).numel() != d {
                return Err(TensorError::Shape {
                    op: "layernorm",
                    lhs: t.shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = t.rows();
        let mut xhat = vec![0.0; t.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = &t.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            &[x, gain, bias],
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Convolution along the sequence axis with zero "same" padding.
    ///
    /// `x` is `len × d_in`, `kernel` is `k × d_in × d_out` with odd `k`; the
    /// output is `len × d_out`.
    pub fn conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (tx, tk) = (self.value(x), self.value(kernel));
        let (len, d_in) = require_rank2("conv1d", tx)?;
        let [k, kd_in, d_out] = *tk.shape() else {
            return Err(TensorError::Shape {
                op: "conv1d",
                lhs: tx.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        };
        if k % 2 == 0 {
            return Err(TensorError::Config(format!(
                "conv1d kernel size must be odd, got {k}"
            )));
        }
        if kd_in != d_in {
            return Err(TensorError::Shape {
                op: "conv1d",
                lhs: tx.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let pad = k / 2;
        let (xs, ks) = (tx.data(), tk.data());
        let mut out = vec![0.0; len * d_out];
        for t in 0..len {
            let dst = &mut out[t * d_out..(t + 1) * d_out];
            for j in 0..k {
                let Some(src_t) = (t + j).checked_sub(pad).filter(|&s| s < len) else {
                    continue;
                };
                for c in 0..d_in {
                    let xv = xs[src_t * d_in + c];
                    if xv == 0.0 {
                        continue;
                    }
                    let kr = &ks[(j * d_in + c) * d_out..(j * d_in + c + 1) * d_out];
                    for (o, kv) in dst.iter_mut().zip(kr) {
                        *o += xv * kv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![len, d_out], out)?;
        Ok(self.push(value, &[x, kernel], Op::Conv1d { x, kernel }))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*inputs.first().ok_or_else(|| TensorError::Config("concat of nothing".into()))?)
            .shape()
            .to_vec();
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible = s.len() == first.len()
                && axis < s.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis)?;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            inputs,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = require_rank2("transpose", t)?;
        let src = t.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, &[x], Op::Transpose { x }))
    }

    /// Mean along `axis`, keeping it as a dimension of size one.
    pub fn mean_pool(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis)?;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                for r in 0..inner {
                    out[o * inner + r] += t.data()[(o * len + i) * inner + r];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, &[x], Op::MeanPool { x, axis }))
    }

    /// Mean over the rows of `x` whose `keep` flag is set; returns `1 × d`.
    pub fn masked_mean_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let t = self.value(x);
        let (rows, d) = require_rank2("masked_mean_rows", t)?;
        if keep.len() != rows {
            return Err(TensorError::Shape {
                op: "masked_mean_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![keep.len()],
            });
        }
        let count = keep.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(TensorError::Config("masked mean over zero rows".into()));
        }
        let mut out = vec![0.0; d];
        for (r, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            for (o, v) in out.iter_mut().zip(&t.data()[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= count as f64);
        let value = Tensor::new(vec![1, d], out)?;
        Ok(self.push(
            value,
            &[x],
            Op::MaskedMeanRows {
                x,
                keep: keep.to_vec(),
                count,
            },
        ))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = require_rank2("slice_cols", t)?;
        if start >= end || end > n {
            return Err(TensorError::Config(format!(
                "column slice {start}..{end} out of range for {n} columns"
            )));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&t.data()[r * n + start..r * n + end]);
        }
        let value = Tensor::new(vec![m, w], out)?;
        Ok(self.push(value, &[x], Op::SliceCols { x, start }))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)` during
    /// training, and the op is the identity otherwise.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Config(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep_scale = 1.0 / (1.0 - p);
        let t = self.value(x);
        let scale: Vec<f64> = (0..t.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let data = t.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, &[x], Op::Dropout { x, scale }))
    }

    /// Row lookup: `table` is `V × d`, the result is `ids.len() × d`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = require_rank2("gather_rows", t)?;
        if ids.is_empty() {
            return Err(TensorError::Config("gather of zero rows".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index { index: id, len: v });
            }
            out.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            value,
            &[table],
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Binary cross-entropy of a single probability against a 0/1 label.
    pub fn bce_loss(&mut self, p: Var, label: f64) -> Result<Var> {
        let t = self.value(p);
        if t.numel() != 1 {
            return Err(TensorError::Shape {
                op: "bce_loss",
                lhs: t.shape().to_vec(),
                rhs: vec![1],
            });
        }
        let raw = t.item();
        let pc = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let loss = -(label * pc.ln() + (1.0 - label) * (1.0 - pc).ln());
        let clamped = pc != raw;
        Ok(self.push(
            Tensor::scalar(loss),
            &[p],
            Op::Bce { p, label, clamped },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), &[x], Op::Sum { x })
    }

    /// Mean of several scalar tensors.
    pub fn mean_of(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(TensorError::Config("mean of zero scalars".into()));
        }
        let mut total = 0.0;
        for &v in inputs {
            let t = self.value(v);
            if t.numel() != 1 {
                return Err(TensorError::Shape {
                    op: "mean_of",
                    lhs: t.shape().to_vec(),
                    rhs: vec![1],
                });
            }
            total += t.item();
        }
        let value = Tensor::scalar(total / inputs.len() as f64);
        Ok(self.push(
            value,
            inputs,
            Op::MeanOf {
                inputs: inputs.to_vec(),
            },
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients land on every
    /// trainable leaf reachable from it; earlier gradients are replaced.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::Shape {
                op: "backward",
                lhs: lt.shape().to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.set_grad(g);
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let da = accumulate(grads, *a, m * k);
                    for r in 0..m {
                        for c in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[r * n + j] * tb.data()[c * n + j];
                            }
                            da[r * k + c] += s;
                        }
                    }
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let db = accumulate(grads, *b, k * n);
                    for r in 0..m {
                        for c in 0..k {
                            let av = ta.data()[r * k + c];
                            if av == 0.0 {
                                continue;
                            }
                            let row = &mut db[c * n..(c + 1) * n];
                            for (d, gv) in row.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                                *d += av * gv;
                            }
                        }
                    }
                }
            }
            Op::Add { a, b, bcast } | Op::Sub { a, b, bcast } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if self.needs(*a) {
                    let da = accumulate(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                }
                if self.needs(*b) {
                    let cols = out.cols();
                    let nb = self.value(*b).numel();
                    let db = accumulate(grads, *b, nb);
                    for (idx, gv) in g.iter().enumerate() {
                        db[bcast.index(idx, cols)] += sign * gv;
                    }
                }
            }
            Op::Mul { a, b, bcast } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let cols = out.cols();
                if self.needs(*a) {
                    let da = accumulate(grads, *a, g.len());
                    for (idx, gv) in g.iter().enumerate() {
                        da[idx] += gv * tb.data()[bcast.index(idx, cols)];
                    }
                }
                if self.needs(*b) {
                    let db = accumulate(grads, *b, tb.numel());
                    for (idx, gv) in g.iter().enumerate() {
                        db[bcast.index(idx, cols)] += gv * ta.data()[idx];
                    }
                }
            }
            Op::Scale { x, factor } => {
                let dx = accumulate(grads, *x, g.len());
                dx.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * factor);
            }
            Op::Sigmoid { x } => {
                let dx = accumulate(grads, *x, g.len());
                for ((d, gv), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y * (1.0 - y);
                }
            }
            Op::Relu { x } => {
                let src = self.value(*x).data();
                let dx = accumulate(grads, *x, g.len());
                for ((d, gv), xv) in dx.iter_mut().zip(g).zip(src) {
                    if *xv > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) =
                    split_axis(out.shape(), *axis).expect("validated in forward");
                let y = out.data();
                let dx = accumulate(grads, *x, g.len());
                for o in 0..outer {
                    for r in 0..inner {
                        let idx = |i: usize| (o * len + i) * inner + r;
                        let dot: f64 = (0..len).map(|i| y[idx(i)] * g[idx(i)]).sum();
                        for i in 0..len {
                            let j = idx(i);
                            dx[j] += y[j] * (g[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = out.cols();
                let rows = out.rows();
                let gv = self.value(*gain).data();
                if self.needs(*gain) {
                    let dg = accumulate(grads, *gain, d);
                    for idx in 0..g.len() {
                        dg[idx % d] += g[idx] * xhat[idx];
                    }
                }
                if self.needs(*bias) {
                    let db = accumulate(grads, *bias, d);
                    for idx in 0..g.len() {
                        db[idx % d] += g[idx];
                    }
                }
                if self.needs(*x) {
                    let dx = accumulate(grads, *x, g.len());
                    for r in 0..rows {
                        let span = r * d..(r + 1) * d;
                        let dxhat: Vec<f64> =
                            g[span.clone()].iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dxhat_xhat = dxhat
                            .iter()
                            .zip(&xhat[span.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / d as f64;
                        for c in 0..d {
                            dx[r * d + c] += inv_std[r]
                                * (dxhat[c] - mean_dxhat - xhat[r * d + c] * mean_dxhat_xhat);
                        }
                    }
                }
            }
            Op::Conv1d { x, kernel } => {
                let (tx, tk) = (self.value(*x), self.value(*kernel));
                let (len, d_in) = (tx.shape()[0], tx.shape()[1]);
                let (k, d_out) = (tk.shape()[0], tk.shape()[2]);
                let pad = k / 2;
                let mut dx = self.needs(*x).then(|| vec![0.0; len * d_in]);
                let mut dk = self.needs(*kernel).then(|| vec![0.0; tk.numel()]);
                for t in 0..len {
                    let gt = &g[t * d_out..(t + 1) * d_out];
                    for j in 0..k {
                        let Some(src_t) = (t + j).checked_sub(pad).filter(|&s| s < len) else {
                            continue;
                        };
                        for c in 0..d_in {
                            let base = (j * d_in + c) * d_out;
                            if let Some(dx) = dx.as_mut() {
                                let kr = &tk.data()[base..base + d_out];
                                dx[src_t * d_in + c] +=
                                    kr.iter().zip(gt).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if let Some(dk) = dk.as_mut() {
                                let xv = tx.data()[src_t * d_in + c];
                                for (d, gv) in dk[base..base + d_out].iter_mut().zip(gt) {
                                    *d += xv * gv;
                                }
                            }
                        }
                    }
                }
                if let Some(v) = dx {
                    add_into(accumulate(grads, *x, v.len()), &v);
                }
                if let Some(v) = dk {
                    add_into(accumulate(grads, *kernel, v.len()), &v);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) =
                    split_axis(out.shape(), *axis).expect("validated in forward");
                let mut offset = 0;
                for &v in inputs {
                    let size = self.value(v).shape()[*axis];
                    if self.needs(v) {
                        let dv = accumulate(grads, v, outer * size * inner);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * size * inner;
                            for q in 0..size * inner {
                                dv[dst + q] += g[src + q];
                            }
                        }
                    }
                    offset += size;
                }
            }
            Op::Transpose { x } => {
                let (n, m) = (out.shape()[0], out.shape()[1]);
                let dx = accumulate(grads, *x, g.len());
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] += g[j * m + i];
                    }
                }
            }
            Op::MeanPool { x, axis } => {
                let shape = self.value(*x).shape().to_vec();
                let (outer, len, inner) = split_axis(&shape, *axis).expect("validated");
                let dx = accumulate(grads, *x, outer * len * inner);
                for o in 0..outer {
                    for i in 0..len {
                        for r in 0..inner {
                            dx[(o * len + i) * inner + r] += g[o * inner + r] / len as f64;
                        }
                    }
                }
            }
            Op::MaskedMeanRows { x, keep, count } => {
                let d = out.cols();
                let dx = accumulate(grads, *x, keep.len() * d);
                for (r, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
                    for c in 0..d {
                        dx[r * d + c] += g[c] / *count as f64;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let n = self.value(*x).cols();
                let (m, w) = (out.shape()[0], out.shape()[1]);
                let dx = accumulate(grads, *x, m * n);
                for r in 0..m {
                    for c in 0..w {
                        dx[r * n + start + c] += g[r * w + c];
                    }
                }
            }
            Op::Dropout { x, scale } => {
                let dx = accumulate(grads, *x, g.len());
                for ((d, gv), s) in dx.iter_mut().zip(g).zip(scale) {
                    *d += gv * s;
                }
            }
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let d = t.cols();
                let dt = accumulate(grads, *table, t.numel());
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        dt[id * d + c] += g[r * d + c];
                    }
                }
            }
            Op::Bce { p, label, clamped } => {
                let dp = accumulate(grads, *p, 1);
                if !clamped {
                    let pv = self.value(*p).item();
                    dp[0] += g[0] * (-label / pv + (1.0 - label) / (1.0 - pv));
                }
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                let dx = accumulate(grads, *x, n);
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::MeanOf { inputs } => {
                let share = g[0] / inputs.len() as f64;
                for &v in inputs {
                    if self.needs(v) {
                        accumulate(grads, v, 1)[0] += share;
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.25, 4.0, -1.0]]));
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn small_matmul_by_hand() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = tape.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 1]);
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
        let y = tape.softmax(x, 0).unwrap();
        assert!(close(tape.value(y).data(), &[1.0 / 3.0; 3], 1e-15));

        let x = tape.constant(Tensor::new(vec![2], vec![2f64.ln(), 0.0]).unwrap());
        let y = tape.softmax(x, 0).unwrap();
        assert!(close(tape.value(y).data(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![5.0, 1.0, 1.0]]));
        let y = tape
            .softmax_masked(x, 1, Some(&[false, true, true]))
            .unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.5, 0.5]);
        let all_masked = tape.softmax_masked(x, 1, Some(&[false; 3])).unwrap();
        assert_eq!(tape.value(all_masked).data(), &[0.0; 3]);
    }

    #[test]
    fn conv_k1_identity_and_same_padding() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![5.0, 6.0],
        ]));
        let eye = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let k = tape.constant(eye);
        let y = tape.conv1d(x, k).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let x5 = tape.constant(Tensor::filled(&[5, 2], 1.0));
        let k7 = tape.constant(Tensor::filled(&[7, 2, 3], 1.0));
        let y = tape.conv1d(x5, k7).unwrap();
        assert_eq!(tape.value(y).shape(), &[5, 3]);
        // centre position sees all five rows, the edges only three
        assert_eq!(tape.value(y).get2(2, 0), 10.0);
        assert_eq!(tape.value(y).get2(0, 0), 8.0);
    }

    #[test]
    fn even_kernel_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[4, 2]));
        let k = tape.constant(Tensor::zeros(&[2, 2, 2]));
        assert!(matches!(tape.conv1d(x, k), Err(TensorError::Config(_))));
    }

    #[test]
    fn layernorm_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[2, 4], 3.0));
        let g = tape.constant(Tensor::filled(&[4], 1.0));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.layernorm(x, g, b).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layernorm_row_mean_tracks_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0, 0.5, 7.0]]));
        let g = tape.constant(Tensor::filled(&[4], 1.0));
        let b = tape.constant(Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let y = tape.layernorm(x, g, b).unwrap();
        let mean = tape.value(y).data().iter().sum::<f64>() / 4.0;
        assert!((mean - 0.25).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_of_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).item(), 0.5);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn dropout_zero_is_identity_and_rejects_bad_p() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[3, 3], 2.0));
        assert_eq!(tape.dropout(x, 0.0, true, 1).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.5, false, 1).unwrap(), x);
        assert!(tape.dropout(x, 1.0, true, 1).is_err());
        assert!(tape.dropout(x, -0.1, true, 1).is_err());
    }

    #[test]
    fn dropout_frequency_and_scaling() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[100, 100], 1.0));
        let y = tape.dropout(x, 0.5, true, 42).unwrap();
        let vals = tape.value(y).data().to_vec();
        let zeroed = vals.iter().filter(|&&v| v == 0.0).count() as f64 / 1e4;
        assert!((zeroed - 0.5).abs() <= 0.02, "zeroed fraction {zeroed}");
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let again = tape.dropout(x, 0.5, true, 42).unwrap();
        assert_eq!(tape.value(again).data(), &vals[..]);
    }

    #[test]
    fn bce_closed_form_and_monotone() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::scalar(0.5));
        let l = tape.bce_loss(p, 1.0).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let p = tape.constant(Tensor::scalar(i as f64 / 100.0));
            let l = tape.bce_loss(p, 1.0).unwrap();
            let v = tape.value(l).item();
            assert!(v < prev);
            prev = v;
        }
        let p = tape.constant(Tensor::scalar(0.0));
        let l = tape.bce_loss(p, 1.0).unwrap();
        assert!(tape.value(l).item().is_finite());
    }

    #[test]
    fn broadcast_add_row_and_column() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let row = tape.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let col = tape.constant(Tensor::new(vec![2, 1], vec![10.0, 20.0]).unwrap());
        let r = tape.add(a, row).unwrap();
        let c = tape.add(r, col).unwrap();
        assert_eq!(
            tape.value(c).data(),
            &[11.0, 12.0, 13.0, 21.0, 22.0, 23.0]
        );
        let bad = tape.constant(Tensor::zeros(&[4]));
        assert!(tape.add(a, bad).is_err());
    }

    #[test]
    fn concat_both_axes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0], vec![2.0]]));
        let b = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let d = tape.concat(&[b, b], 0).unwrap();
        assert_eq!(tape.value(d).shape(), &[4, 2]);
        assert!(tape.concat(&[a, b], 0).is_err());
    }

    #[test]
    fn backward_reaches_only_trainable_leaves() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_rows(&[vec![2.0]]).requires_grad(true));
        let x = tape.constant(Tensor::from_rows(&[vec![3.0]]));
        let y = tape.mul(w, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w), Some(&[3.0][..]));
        assert_eq!(tape.grad(x), None);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::zeros(&[2, 2]).requires_grad(true));
        assert!(tape.backward(w).is_err());
    }
}
