//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every primitive applied during a forward pass.
//! Calling [`Graph::backward`] on a scalar node walks the tape in reverse
//! and accumulates `d loss / d node` for every node that depends on a
//! parameter. Gradients of parameter leaves can then be added to their
//! [`ParamStore`] with [`Gradients::accumulate_into`].
//!
//! Most kernels treat a tensor as a matrix of `rows() x cols()`, i.e. the
//! trailing axis is the feature axis and every leading axis is batch.

use crate::error::{NumError, Result};
use crate::param::{ParamId, ParamStore};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Blend(Vec<T>, Var, Var),
    BroadcastAdd(Var, Var),
    DotLast(Var, Var),
    MaskedSoftmax(Var, Vec<bool>),
    WeightedSum(Var, Var),
    Stack(Vec<Var>),
    Reshape(Var),
    CrossEntropy(Var, Vec<Option<usize>>, Vec<T>),
    Sum(Var),
    SumAll(Vec<Var>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> NumError {
    NumError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax over `values`, restricted to positions where
/// `mask` is true (all positions when `mask` is `None`). Masked positions
/// get probability zero.
fn softmax_into<T: Scalar>(values: &[T], mask: Option<&[bool]>, out: &mut [T]) {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let mut max = T::neg_infinity();
    for (j, &v) in values.iter().enumerate() {
        if keep(j) && v > max {
            max = v;
        }
    }
    let mut total = T::zero();
    for (j, (&v, o)) in values.iter().zip(out.iter_mut()).enumerate() {
        *o = if keep(j) { (v - max).exp() } else { T::zero() };
        total += *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Softmax of a vector with max-subtraction.
pub fn softmax<T: Scalar>(values: &[T]) -> Result<Vec<T>> {
    if values.is_empty() {
        return Err(NumError::Empty("softmax"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(NumError::NonFinite("softmax input".into()));
    }
    let mut out = vec![T::zero(); values.len()];
    softmax_into(values, None, &mut out);
    Ok(out)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param(_) => true,
            Op::Leaf => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (no gradient flows into it).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Records a parameter leaf holding a copy of its current value.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), &[])
    }

    /// `a @ b` where `a` is `[..., k]` and `b` is `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rank() != 2 || av.cols() != bv.shape()[0] {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a `[n]` bias to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rank() != 1 || av.cols() != bv.len() {
            return Err(shape_err("add_bias", av.shape(), bv.shape()));
        }
        let n = bv.len();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let shape = av.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddBias(a, bias), &[a, bias]))
    }

    /// Affine map `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(av.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.tanh_fast());
        self.push(t, Op::Tanh(a), &[a])
    }

    /// Concatenates along the trailing axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(NumError::Empty("concat"))?;
        let lead = self.value(*first).shape()[..self.value(*first).rank() - 1].to_vec();
        let rows = self.value(*first).rows();
        let mut width = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.shape()[..pv.rank() - 1] != lead[..] {
                return Err(shape_err("concat", self.value(*first).shape(), pv.shape()));
            }
            width += pv.cols();
        }
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(width);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(parts.to_vec()), parts))
    }

    /// Columns `[start, start + width)` of the trailing axis.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let av = self.value(a);
        if width == 0 || start + width > av.cols() {
            return Err(shape_err("slice_cols", av.shape(), &[start, width]));
        }
        let mut out = Vec::with_capacity(av.rows() * width);
        for r in 0..av.rows() {
            out.extend_from_slice(&av.row(r)[start..start + width]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = width;
        Ok(self.push(Tensor::from_parts(shape, out), Op::SliceCols(a, start), &[a]))
    }

    /// Row lookup into a `[rows, dim]` table, giving `[ids.len(), dim]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(shape_err("gather", tv.shape(), &[ids.len()]));
        }
        if ids.is_empty() {
            return Err(NumError::Empty("gather"));
        }
        let size = tv.shape()[0];
        if let Some(&bad) = ids.iter().find(|&&i| i >= size) {
            return Err(NumError::OutOfRange {
                what: "embedding table",
                index: bad,
                size,
            });
        }
        let dim = tv.cols();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(tv.row(i));
        }
        let t = Tensor::from_parts(vec![ids.len(), dim], out);
        Ok(self.push(t, Op::Gather(table, ids.to_vec()), &[table]))
    }

    /// Row-wise select: `mask[r] * a[r] + (1 - mask[r]) * b[r]`.
    pub fn blend(&mut self, mask: &[T], a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || mask.len() != av.rows() {
            return Err(shape_err("blend", av.shape(), bv.shape()));
        }
        let n = av.cols();
        let mut out = Vec::with_capacity(av.len());
        for (r, &m) in mask.iter().enumerate() {
            let keep = T::one() - m;
            out.extend(
                av.row(r)
                    .iter()
                    .zip(bv.row(r))
                    .map(|(&x, &y)| m * x + keep * y),
            );
        }
        debug_assert_eq!(out.len(), av.rows() * n);
        let shape = av.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Blend(mask.to_vec(), a, b), &[a, b]))
    }

    /// `m[b, q, :] + v[b, :]` for `m: [B, Q, D]`, `v: [B, D]`.
    pub fn broadcast_add(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mv, vv) = (self.value(m), self.value(v));
        if mv.rank() != 3
            || vv.rank() != 2
            || mv.shape()[0] != vv.shape()[0]
            || mv.shape()[2] != vv.shape()[1]
        {
            return Err(shape_err("broadcast_add", mv.shape(), vv.shape()));
        }
        let (q, d) = (mv.shape()[1], mv.shape()[2]);
        let mut out = mv.data().to_vec();
        for (i, row) in out.chunks_mut(d).enumerate() {
            let b = i / q;
            for (o, &x) in row.iter_mut().zip(vv.row(b)) {
                *o += x;
            }
        }
        let shape = mv.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::BroadcastAdd(m, v), &[m, v]))
    }

    /// Contracts the trailing axis of `m` with the vector `p`.
    pub fn dot_last(&mut self, m: Var, p: Var) -> Result<Var> {
        let (mv, pv) = (self.value(m), self.value(p));
        if pv.rank() != 1 || mv.cols() != pv.len() {
            return Err(shape_err("dot_last", mv.shape(), pv.shape()));
        }
        let out: Vec<T> = (0..mv.rows())
            .map(|r| mv.row(r).iter().zip(pv.data()).map(|(&a, &b)| a * b).sum())
            .collect();
        let mut shape = mv.shape()[..mv.rank() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::DotLast(m, p), &[m, p]))
    }

    /// Softmax over the trailing axis, ignoring positions whose `mask`
    /// entry is false. Every row must keep at least one position.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let av = self.value(a);
        if mask.len() != av.len() {
            return Err(shape_err("masked_softmax", av.shape(), &[mask.len()]));
        }
        let n = av.cols();
        let mut out = vec![T::zero(); av.len()];
        for r in 0..av.rows() {
            let m = &mask[r * n..(r + 1) * n];
            if !m.iter().any(|&k| k) {
                return Err(NumError::Empty("masked_softmax row"));
            }
            softmax_into(av.row(r), Some(m), &mut out[r * n..(r + 1) * n]);
        }
        let shape = av.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaskedSoftmax(a, mask.to_vec()), &[a]))
    }

    /// `out[b, :] = sum_q w[b, q] * h[b, q, :]`.
    pub fn weighted_sum(&mut self, w: Var, h: Var) -> Result<Var> {
        let (wv, hv) = (self.value(w), self.value(h));
        if wv.rank() != 2 || hv.rank() != 3 || wv.shape() != &hv.shape()[..2] {
            return Err(shape_err("weighted_sum", wv.shape(), hv.shape()));
        }
        let (bsz, q, d) = (hv.shape()[0], hv.shape()[1], hv.shape()[2]);
        let mut out = vec![T::zero(); bsz * d];
        for b in 0..bsz {
            let o = &mut out[b * d..(b + 1) * d];
            for j in 0..q {
                let wt = wv.data()[b * q + j];
                for (x, &y) in o.iter_mut().zip(hv.row(b * q + j)) {
                    *x += wt * y;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![bsz, d], out), Op::WeightedSum(w, h), &[w, h]))
    }

    /// Stacks equally shaped `[B, D]` steps into `[B, T, D]`.
    pub fn stack_steps(&mut self, steps: &[Var]) -> Result<Var> {
        let first = *steps.first().ok_or(NumError::Empty("stack_steps"))?;
        let fv = self.value(first);
        if fv.rank() != 2 {
            return Err(shape_err("stack_steps", fv.shape(), &[]));
        }
        let (bsz, d) = (fv.shape()[0], fv.shape()[1]);
        for &s in steps {
            if self.value(s).shape() != [bsz, d] {
                return Err(shape_err("stack_steps", &[bsz, d], self.value(s).shape()));
            }
        }
        let t = steps.len();
        let mut out = Vec::with_capacity(bsz * t * d);
        for b in 0..bsz {
            for &s in steps {
                out.extend_from_slice(self.value(s).row(b));
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![bsz, t, d], out),
            Op::Stack(steps.to_vec()),
            steps,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// Summed cross-entropy of row-wise softmax(`logits`) against `targets`.
    /// Rows whose target is `None` contribute nothing. Returns a scalar.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(shape_err("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let n = lv.cols();
        let mut probs = vec![T::zero(); lv.len()];
        let mut loss = T::zero();
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= n {
                return Err(NumError::OutOfRange {
                    what: "vocabulary",
                    index: t,
                    size: n,
                });
            }
            let row = lv.row(r);
            let p = &mut probs[r * n..(r + 1) * n];
            softmax_into(row, None, p);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            loss += lse - row[t];
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, targets.to_vec(), probs),
            &[logits],
        ))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Element-wise sum of equally shaped tensors.
    pub fn sum_all(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(NumError::Empty("sum_all"))?;
        let mut acc = self.value(first).clone();
        for &p in &parts[1..] {
            let pv = self.value(p);
            if pv.shape() != acc.shape() {
                return Err(shape_err("sum_all", acc.shape(), pv.shape()));
            }
            acc.add_assign(pv);
        }
        Ok(self.push(acc, Op::SumAll(parts.to_vec()), parts))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(NumError::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(pid) => Some((pid, Var(i))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.shape()[1]);
                if wants(*a) {
                    let da = slot(grads, *a, av);
                    gemm(m, n, k, g.data(), false, bv.data(), true, da.data_mut(), true);
                }
                if wants(*b) {
                    let db = slot(grads, *b, bv);
                    gemm(k, m, n, av.data(), true, g.data(), false, db.data_mut(), true);
                }
            }
            Op::AddBias(a, b) => {
                if wants(*a) {
                    slot(grads, *a, val(*a)).add_assign(g);
                }
                if wants(*b) {
                    let db = slot(grads, *b, val(*b));
                    let n = db.len();
                    for row in g.data().chunks(n) {
                        for (d, &x) in db.data_mut().iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    slot(grads, *a, val(*a)).add_assign(g);
                }
                if wants(*b) {
                    slot(grads, *b, val(*b)).add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    slot(grads, *a, val(*a)).add_assign(g);
                }
                if wants(*b) {
                    let db = slot(grads, *b, val(*b));
                    for (d, &x) in db.data_mut().iter_mut().zip(g.data()) {
                        *d -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    let da = slot(grads, *a, av);
                    for ((d, &x), &y) in da.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *d += x * y;
                    }
                }
                if wants(*b) {
                    let db = slot(grads, *b, bv);
                    for ((d, &x), &y) in db.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *d += x * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                let da = slot(grads, *a, val(*a));
                for (d, &x) in da.data_mut().iter_mut().zip(g.data()) {
                    *d += x * *c;
                }
            }
            Op::Sigmoid(a) => {
                let da = slot(grads, *a, val(*a));
                for ((d, &x), &y) in da.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *d += x * y * (T::one() - y);
                }
            }
            Op::Tanh(a) => {
                let da = slot(grads, *a, val(*a));
                for ((d, &x), &y) in da.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *d += x * (T::one() - y * y);
                }
            }
            Op::Concat(parts) => {
                let width = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let w = pv.cols();
                    if wants(p) {
                        let dp = slot(grads, p, pv);
                        for r in 0..pv.rows() {
                            let src = &g.data()[r * width + offset..r * width + offset + w];
                            for (d, &x) in dp.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += x;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let (n, w) = (av.cols(), g.cols());
                let da = slot(grads, *a, av);
                for r in 0..g.rows() {
                    let dst = &mut da.data_mut()[r * n + start..r * n + start + w];
                    for (d, &x) in dst.iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
            }
            Op::Gather(table, ids) => {
                let tv = val(*table);
                let dim = tv.cols();
                let dt = slot(grads, *table, tv);
                for (r, &i) in ids.iter().enumerate() {
                    let dst = &mut dt.data_mut()[i * dim..(i + 1) * dim];
                    for (d, &x) in dst.iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
            }
            Op::Blend(mask, a, b) => {
                let n = g.cols();
                if wants(*a) {
                    let da = slot(grads, *a, val(*a));
                    for (r, &m) in mask.iter().enumerate() {
                        for (d, &x) in da.data_mut()[r * n..(r + 1) * n].iter_mut().zip(g.row(r)) {
                            *d += m * x;
                        }
                    }
                }
                if wants(*b) {
                    let db = slot(grads, *b, val(*b));
                    for (r, &m) in mask.iter().enumerate() {
                        let keep = T::one() - m;
                        for (d, &x) in db.data_mut()[r * n..(r + 1) * n].iter_mut().zip(g.row(r)) {
                            *d += keep * x;
                        }
                    }
                }
            }
            Op::BroadcastAdd(m, v) => {
                if wants(*m) {
                    slot(grads, *m, val(*m)).add_assign(g);
                }
                if wants(*v) {
                    let q = val(*m).shape()[1];
                    let d = g.cols();
                    let dv = slot(grads, *v, val(*v));
                    for (i, row) in g.data().chunks(d).enumerate() {
                        let b = i / q;
                        for (o, &x) in dv.data_mut()[b * d..(b + 1) * d].iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                }
            }
            Op::DotLast(m, p) => {
                let (mv, pv) = (val(*m), val(*p));
                let n = pv.len();
                if wants(*m) {
                    let dm = slot(grads, *m, mv);
                    for (r, &gr) in g.data().iter().enumerate() {
                        for (d, &y) in dm.data_mut()[r * n..(r + 1) * n].iter_mut().zip(pv.data()) {
                            *d += gr * y;
                        }
                    }
                }
                if wants(*p) {
                    let dp = slot(grads, *p, pv);
                    for (r, &gr) in g.data().iter().enumerate() {
                        for (d, &x) in dp.data_mut().iter_mut().zip(mv.row(r)) {
                            *d += gr * x;
                        }
                    }
                }
            }
            Op::MaskedSoftmax(a, mask) => {
                let y = &node.value;
                let n = y.cols();
                let da = slot(grads, *a, val(*a));
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..n {
                        if mask[r * n + j] {
                            da.data_mut()[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::WeightedSum(w, h) => {
                let (wv, hv) = (val(*w), val(*h));
                let (bsz, q, d) = (hv.shape()[0], hv.shape()[1], hv.shape()[2]);
                if wants(*w) {
                    let dw = slot(grads, *w, wv);
                    for b in 0..bsz {
                        for j in 0..q {
                            let s: T = g.row(b).iter().zip(hv.row(b * q + j)).map(|(&x, &y)| x * y).sum();
                            dw.data_mut()[b * q + j] += s;
                        }
                    }
                }
                if wants(*h) {
                    let dh = slot(grads, *h, hv);
                    for b in 0..bsz {
                        for j in 0..q {
                            let wt = wv.data()[b * q + j];
                            let dst = &mut dh.data_mut()[(b * q + j) * d..(b * q + j + 1) * d];
                            for (o, &x) in dst.iter_mut().zip(g.row(b)) {
                                *o += wt * x;
                            }
                        }
                    }
                }
            }
            Op::Stack(steps) => {
                let t = steps.len();
                let d = g.cols();
                for (s, &step) in steps.iter().enumerate() {
                    if !wants(step) {
                        continue;
                    }
                    let sv = val(step);
                    let ds = slot(grads, step, sv);
                    for b in 0..sv.shape()[0] {
                        let src = g.row(b * t + s);
                        for (o, &x) in ds.data_mut()[b * d..(b + 1) * d].iter_mut().zip(src) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                let da = slot(grads, *a, val(*a));
                for (d, &x) in da.data_mut().iter_mut().zip(g.data()) {
                    *d += x;
                }
            }
            Op::CrossEntropy(logits, targets, probs) => {
                let lv = val(*logits);
                let n = lv.cols();
                let up = g.data()[0];
                let dl = slot(grads, *logits, lv);
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let dst = &mut dl.data_mut()[r * n..(r + 1) * n];
                    for (d, &p) in dst.iter_mut().zip(&probs[r * n..(r + 1) * n]) {
                        *d += up * p;
                    }
                    dst[t] -= up;
                }
            }
            Op::Sum(a) => {
                let up = g.data()[0];
                let da = slot(grads, *a, val(*a));
                for d in da.data_mut() {
                    *d += up;
                }
            }
            Op::SumAll(parts) => {
                for &p in parts {
                    if wants(p) {
                        slot(grads, p, val(p)).add_assign(g);
                    }
                }
            }
        }
    }
}

fn slot<'a, T: Scalar>(
    grads: &'a mut [Option<Tensor<T>>],
    v: Var,
    like: &Tensor<T>,
) -> &'a mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the loss through any parameter path.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradient of every parameter leaf into its store slot.
    /// A parameter bound more than once has its contributions summed.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(pid, var) in &self.params {
            if let Some(g) = self.wrt(var) {
                store.get_mut(pid).grad.add_assign(g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_basics() {
        assert_eq!(softmax(&[0.0f64, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax(&[42.0f64]).unwrap(), vec![1.0]);
        let big = softmax(&[1000.0f32, 1000.0]).unwrap();
        assert_eq!(big, vec![0.5, 0.5]);
        assert!(matches!(softmax::<f64>(&[]), Err(NumError::Empty(_))));
    }

    #[test]
    fn repeated_use_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("y", t(&[2], &[1.0, -3.0])).unwrap();
        let mut g = Graph::new();
        let y = g.param(&store, id);
        let s = g.add(y, y).unwrap();
        let loss = g.sum(s);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(y).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn zero_scaled_loss_has_zero_gradients() {
        let mut store = ParamStore::new();
        let id = store.add("w", t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let th = g.tanh(w);
        let s = g.sum(th);
        let loss = g.scale(s, 0.0);
        g.backward(loss).unwrap().accumulate_into(&mut store);
        assert!(store.get(id).grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_gradient_is_outer_product() {
        // loss = sum(x @ W) with x fixed: dW[i][j] = x[i]
        let mut store = ParamStore::new();
        let id = store.add("W", t(&[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6])).unwrap();
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[1.0, -2.0, 0.5]));
        let w = g.param(&store, id);
        let y = g.matmul(x, w).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), &[1.0, 1.0, -2.0, -2.0, 0.5, 0.5]);
        assert!(grads.wrt(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(NumError::NonScalarLoss(_))));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 3], &[0.0; 6]));
        let b = g.constant(t(&[2, 3], &[0.0; 6]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] vs [2, 3]"), "{err}");
    }

    #[test]
    fn gather_checks_range() {
        let mut g = Graph::<f64>::new();
        let tab = g.constant(t(&[2, 2], &[0.0; 4]));
        assert!(matches!(g.gather(tab, &[2]), Err(NumError::OutOfRange { .. })));
    }

    #[test]
    fn masked_softmax_zeroes_masked_positions() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[1, 3], &[5.0, 1.0, 1.0]));
        let y = g.masked_softmax(a, &[false, true, true]).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.5, 0.5]);
    }
}
