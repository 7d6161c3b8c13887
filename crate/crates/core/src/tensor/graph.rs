use super::kernels::{axis_extents, inverse_perm, permute, phi_cdf, phi_pdf};
use super::{MaskStream, Scalar, Tensor};
use crate::error::{Result, StampError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    Add(Var, Var),
    AddTrailing(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    MatMul(Var, Var),
    Bmm(Var, Var),
    Gelu(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Dropout(Var, Vec<F>),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Repeat {
        x: Var,
        axis: usize,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<F>,
        labels: Vec<usize>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Append-only tape of executed operations.
///
/// Nodes are stored in execution order, so every node's parents have smaller
/// indices and a reverse sweep visits each node after all of its consumers.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> StampError {
    StampError::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// `x + y`, with `y` broadcast over the leading axes of `x`.
    /// `y.shape` must equal the trailing dimensions of `x.shape`.
    pub fn add_trailing(&mut self, x: Var, y: Var) -> Result<Var> {
        let (tx, ty) = (self.value(x), self.value(y));
        let (xs, ys) = (tx.shape(), ty.shape());
        if ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
            return Err(shape_err("add_trailing", xs, ys));
        }
        let chunk = ty.len();
        let mut data = tx.data().to_vec();
        if chunk > 0 {
            for block in data.chunks_mut(chunk) {
                for (a, &b) in block.iter_mut().zip(ty.data()) {
                    *a += b;
                }
            }
        }
        let out = Tensor::new(xs.to_vec(), data)?;
        Ok(self.push(out, Op::AddTrailing(x, y), &[x, y]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let t = self.value(x);
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v * c).collect(),
        };
        self.push(out, Op::Scale(x, c), &[x])
    }

    /// `a[.., m, k] · b[k, n] -> [.., m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = ta.len() / k.max(1);
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        let mut data = vec![F::zero(); m * n];
        if k > 0 {
            F::gemm(
                m,
                k,
                n,
                ta.data(),
                (k as isize, 1),
                tb.data(),
                (n as isize, 1),
                F::zero(),
                &mut data,
            );
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched product `a[b, m, k] · b[b, k, n] -> [b, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("bmm", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut data = vec![F::zero(); bs * m * n];
        if k > 0 {
            for i in 0..bs {
                F::gemm(
                    m,
                    k,
                    n,
                    &ta.data()[i * m * k..(i + 1) * m * k],
                    (k as isize, 1),
                    &tb.data()[i * k * n..(i + 1) * k * n],
                    (n as isize, 1),
                    F::zero(),
                    &mut data[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let out = Tensor::new(vec![bs, m, n], data)?;
        Ok(self.push(out, Op::Bmm(a, b), &[a, b]))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v * phi_cdf(v)).collect(),
        };
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(StampError::Shape(format!(
                "softmax: axis {axis} out of range for {:?}",
                t.shape()
            )));
        }
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: softmax_axis(t.data(), t.shape(), axis),
        };
        Ok(self.push(out, Op::Softmax(x, axis), &[x]))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let d = *t.shape().last().unwrap_or(&0);
        if self.shape(gain) != [d] || self.shape(bias) != [d] || d == 0 {
            return Err(shape_err("layer_norm", t.shape(), self.shape(gain)));
        }
        let eps = F::from_f64c(eps);
        let df = F::from_usize(d).unwrap();
        let rows = t.len() / d;
        let mut xhat = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(rows);
        for row in t.data().chunks(d) {
            let mean = row.iter().copied().sum::<F>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / df;
            let is = F::one() / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|&v| (v - mean) * is));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let data = xhat
            .chunks(d)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((&h, &g), &b)| h * g + b))
            .collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is 0.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        masks: &mut MaskStream,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(StampError::Config(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        let mask: Vec<F> = masks
            .next_mask(t.len(), rate)
            .into_iter()
            .map(F::from_f64c)
            .collect();
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        };
        Ok(self.push(out, Op::Dropout(x, mask), &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(
                *xs.first()
                    .ok_or_else(|| StampError::Shape("concat of nothing".into()))?,
            )
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(StampError::Shape(format!(
                "concat: axis {axis} out of range for {first:?}"
            )));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(shape_err("concat", &first, s));
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_extents(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Concat(xs.to_vec(), axis), xs))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(StampError::Shape(format!(
                "slice [{start}, {}) on axis {axis} out of range for {s:?}",
                start + len
            )));
        }
        let (outer, dim, inner) = axis_extents(s, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut out_shape = s.to_vec();
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Slice { x, axis, start }, &[x]))
    }

    /// Splits `x` along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let dim = self.shape(x).get(axis).copied().unwrap_or(0);
        if sizes.iter().sum::<usize>() != dim {
            return Err(StampError::Shape(format!(
                "split sizes {sizes:?} do not cover axis {axis} of {:?}",
                self.shape(x)
            )));
        }
        let mut start = 0;
        let mut parts = Vec::with_capacity(sizes.len());
        for &len in sizes {
            parts.push(self.slice(x, axis, start, len)?);
            start += len;
        }
        Ok(parts)
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if axis >= s.len() {
            return Err(StampError::Shape(format!(
                "reduce: axis {axis} out of range for {s:?}"
            )));
        }
        let (outer, dim, inner) = axis_extents(s, axis);
        let mut data = vec![F::zero(); outer * inner];
        for o in 0..outer {
            let acc = &mut data[o * inner..(o + 1) * inner];
            for d in 0..dim {
                let row = &t.data()[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        if mean {
            let inv = F::one() / F::from_usize(dim).unwrap();
            data.iter_mut().for_each(|v| *v *= inv);
        }
        let mut out_shape = s.to_vec();
        out_shape.remove(axis);
        let out = Tensor::new(out_shape, data)?;
        let op = if mean {
            Op::Mean(x, axis)
        } else {
            Op::Sum(x, axis)
        };
        Ok(self.push(out, op, &[x]))
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<F>();
        self.push(Tensor::scalar(total), Op::SumAll(x), &[x])
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut seen = vec![false; t.rank()];
        if perm.len() != t.rank()
            || perm
                .iter()
                .any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(StampError::Shape(format!(
                "permute {perm:?} invalid for {:?}",
                t.shape()
            )));
        }
        let out_shape = perm.iter().map(|&p| t.shape()[p]).collect();
        let data = permute(t.data(), t.shape(), perm);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Permute(x, perm.to_vec()), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.value(x).rank();
        if r < 2 {
            return Err(StampError::Shape("transpose needs rank >= 2".into()));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Inserts a new axis of size `n` at position `axis`, repeating `x` along it.
    pub fn repeat(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let t = self.value(x);
        if axis > t.rank() {
            return Err(StampError::Shape(format!(
                "repeat: axis {axis} out of range for {:?}",
                t.shape()
            )));
        }
        let outer: usize = t.shape()[..axis].iter().product();
        let inner: usize = t.shape()[axis..].iter().product();
        let mut data = Vec::with_capacity(t.len() * n);
        for o in 0..outer {
            let block = &t.data()[o * inner..(o + 1) * inner];
            for _ in 0..n {
                data.extend_from_slice(block);
            }
        }
        let mut out_shape = t.shape().to_vec();
        out_shape.insert(axis, n);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Repeat { x, axis }, &[x]))
    }

    /// Batch-mean negative log-likelihood of `labels` under `softmax(logits)`,
    /// evaluated through log-sum-exp. `logits` is `[batch, classes]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let s = t.shape();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(StampError::Shape(format!(
                "cross_entropy: logits {s:?} vs {} labels",
                labels.len()
            )));
        }
        let n = s[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
            return Err(StampError::Data(format!(
                "class index {bad} out of range for {n} classes"
            )));
        }
        let probs = softmax_axis(t.data(), s, 1);
        let mut total = F::zero();
        for (row, &y) in t.data().chunks(n).zip(labels) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
            total += lse - row[y];
        }
        let loss = total / F::from_usize(labels.len()).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of leaves that require
    /// grad are returned; uses of the same node accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if !self.value(loss).shape().is_empty() && self.value(loss).len() != 1 {
            return Err(StampError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss), F::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<F>, g: Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let like = |v: Var, data: Vec<F>| Tensor {
            shape: self.shape(v).to_vec(),
            data,
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.clone());
                }
                self.accumulate(grads, *a, g);
            }
            Op::AddTrailing(x, y) => {
                if self.wants(*y) {
                    let chunk = self.value(*y).len();
                    let mut gy = vec![F::zero(); chunk];
                    for block in g.data().chunks(chunk) {
                        for (a, &b) in gy.iter_mut().zip(block) {
                            *a += b;
                        }
                    }
                    self.accumulate(grads, *y, like(*y, gy));
                }
                self.accumulate(grads, *x, g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = g
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    self.accumulate(grads, *a, like(*a, d));
                }
                if self.wants(*b) {
                    let d = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    self.accumulate(grads, *b, like(*b, d));
                }
            }
            Op::Scale(x, c) => {
                let d = g.data().iter().map(|&v| v * *c).collect();
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (k, n) = (tb.shape()[0], tb.shape()[1]);
                let m = if k == 0 { 0 } else { ta.len() / k };
                if self.wants(*a) && k > 0 {
                    // dA = dC · Bᵀ
                    let mut da = vec![F::zero(); m * k];
                    F::gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        (n as isize, 1),
                        tb.data(),
                        (1, n as isize),
                        F::zero(),
                        &mut da,
                    );
                    self.accumulate(grads, *a, like(*a, da));
                }
                if self.wants(*b) {
                    // dB = Aᵀ · dC, summed over every leading index
                    let mut db = vec![F::zero(); k * n];
                    if m > 0 {
                        F::gemm(
                            k,
                            m,
                            n,
                            ta.data(),
                            (1, k as isize),
                            g.data(),
                            (n as isize, 1),
                            F::zero(),
                            &mut db,
                        );
                    }
                    self.accumulate(grads, *b, like(*b, db));
                }
            }
            Op::Bmm(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = tb.shape()[2];
                if self.wants(*a) {
                    let mut da = vec![F::zero(); bs * m * k];
                    for i in 0..bs {
                        F::gemm(
                            m,
                            n,
                            k,
                            &g.data()[i * m * n..(i + 1) * m * n],
                            (n as isize, 1),
                            &tb.data()[i * k * n..(i + 1) * k * n],
                            (1, n as isize),
                            F::zero(),
                            &mut da[i * m * k..(i + 1) * m * k],
                        );
                    }
                    self.accumulate(grads, *a, like(*a, da));
                }
                if self.wants(*b) {
                    let mut db = vec![F::zero(); bs * k * n];
                    for i in 0..bs {
                        F::gemm(
                            k,
                            m,
                            n,
                            &ta.data()[i * m * k..(i + 1) * m * k],
                            (1, k as isize),
                            &g.data()[i * m * n..(i + 1) * m * n],
                            (n as isize, 1),
                            F::zero(),
                            &mut db[i * k * n..(i + 1) * k * n],
                        );
                    }
                    self.accumulate(grads, *b, like(*b, db));
                }
            }
            Op::Gelu(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &v)| g * (phi_cdf(v) + v * phi_pdf(v)))
                    .collect();
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Softmax(x, axis) => {
                let y = &node.value;
                let (outer, dim, inner) = axis_extents(y.shape(), *axis);
                let mut d = vec![F::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * dim + k) * inner + i;
                        let dot = (0..dim)
                            .map(|k| g.data()[idx(k)] * y.data()[idx(k)])
                            .sum::<F>();
                        for k in 0..dim {
                            d[idx(k)] = y.data()[idx(k)] * (g.data()[idx(k)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let dim = self.shape(*gain)[0];
                let df = F::from_usize(dim).unwrap();
                let gv = self.value(*gain).data();
                if self.wants(*gain) || self.wants(*bias) {
                    let mut dg = vec![F::zero(); dim];
                    let mut db = vec![F::zero(); dim];
                    for (grow, hrow) in g.data().chunks(dim).zip(xhat.chunks(dim)) {
                        for j in 0..dim {
                            dg[j] += grow[j] * hrow[j];
                            db[j] += grow[j];
                        }
                    }
                    self.accumulate(grads, *gain, like(*gain, dg));
                    self.accumulate(grads, *bias, like(*bias, db));
                }
                if self.wants(*x) {
                    let mut dx = Vec::with_capacity(g.len());
                    for ((grow, hrow), &is) in
                        g.data().chunks(dim).zip(xhat.chunks(dim)).zip(inv_std)
                    {
                        let dh: Vec<F> = grow.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let mean_dh = dh.iter().copied().sum::<F>() / df;
                        let mean_dh_h = dh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<F>() / df;
                        dx.extend(
                            dh.iter()
                                .zip(hrow)
                                .map(|(&a, &h)| is * (a - mean_dh - h * mean_dh_h)),
                        );
                    }
                    self.accumulate(grads, *x, like(*x, dx));
                }
            }
            Op::Dropout(x, mask) => {
                let d = g.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = axis_extents(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let dim = self.shape(v)[*axis];
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(outer * dim * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g.data()[base..base + dim * inner]);
                        }
                        self.accumulate(grads, v, like(v, d));
                    }
                    offset += dim;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, dim, inner) = axis_extents(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let mut d = vec![F::zero(); outer * dim * inner];
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    d[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let (outer, dim, inner) = axis_extents(self.shape(*x), *axis);
                let factor = if matches!(node.op, Op::Mean(..)) {
                    F::one() / F::from_usize(dim).unwrap()
                } else {
                    F::one()
                };
                let mut d = Vec::with_capacity(outer * dim * inner);
                for o in 0..outer {
                    let row = &g.data()[o * inner..(o + 1) * inner];
                    for _ in 0..dim {
                        d.extend(row.iter().map(|&v| v * factor));
                    }
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::SumAll(x) => {
                let gv = g.data()[0];
                let d = vec![gv; self.value(*x).len()];
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Permute(x, perm) => {
                let d = permute(g.data(), g.shape(), &inverse_perm(perm));
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, like(*x, g.into_data()));
            }
            Op::Repeat { x, axis } => {
                let s = node.value.shape();
                let n = s[*axis];
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[*axis + 1..].iter().product();
                let mut d = vec![F::zero(); outer * inner];
                for o in 0..outer {
                    let acc = &mut d[o * inner..(o + 1) * inner];
                    for r in 0..n {
                        let base = (o * n + r) * inner;
                        for (a, &v) in acc.iter_mut().zip(&g.data()[base..base + inner]) {
                            *a += v;
                        }
                    }
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let n = self.shape(*logits)[1];
                let scale = g.data()[0] / F::from_usize(labels.len()).unwrap();
                let mut d: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (row, &y) in labels.iter().enumerate() {
                    d[row * n + y] -= scale;
                }
                self.accumulate(grads, *logits, like(*logits, d));
            }
        }
    }
}

pub(crate) fn softmax_axis<F: Scalar>(src: &[F], shape: &[usize], axis: usize) -> Vec<F> {
    let (outer, dim, inner) = axis_extents(shape, axis);
    let mut out = vec![F::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * dim + k) * inner + i;
            let m = (0..dim)
                .map(|k| src[idx(k)])
                .fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for k in 0..dim {
                let e = (src[idx(k)] - m).exp();
                out[idx(k)] = e;
                total += e;
            }
            for k in 0..dim {
                out[idx(k)] = out[idx(k)] / total;
            }
        }
    }
    out
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
