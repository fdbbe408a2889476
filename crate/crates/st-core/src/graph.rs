//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a per-step tape: forward calls append op records (with
//! saved activations), `backward` walks them once in reverse append order.
//! Parameters live outside the tape in a [`ParamStore`]; leaf nodes remember
//! their [`ParamId`] so gradients can be accumulated back into the store
//! after the backward pass.
//!
//! Shapes are 1-D or 2-D. Broadcasting is restricted to scalar-with-tensor
//! and equal shapes; anything else is a dimension error. Any op that would
//! produce a non-finite value fails with a numeric error instead.

use crate::activations::{
    leaky, leaky_deriv, sparse_act, sparse_act_deriv, validate_leaky_params,
    validate_sparse_params, DerivMode,
};
use crate::error::{Error, Result};
use crate::tensor::{c, Element, ParamId, ParamStore, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    Gather { param: ParamId, rows: Vec<usize> },
    Matmul { a: NodeId, b: NodeId },
    Transpose { a: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddScalar { a: NodeId },
    MulScalar { a: NodeId, k: f64 },
    Negate { a: NodeId },
    Relu { a: NodeId },
    Tanh { a: NodeId },
    Sigmoid { a: NodeId },
    Clamp { a: NodeId, lo: f64, hi: f64 },
    SparseAct { a: NodeId, beta: f64, gamma: f64, mode: DerivMode },
    Leaky { a: NodeId, kappa: f64, theta: f64 },
    Sum { a: NodeId },
    Mean { a: NodeId },
    RowSum { a: NodeId },
    SqrtEps { a: NodeId, eps: f64 },
    Reshape { a: NodeId },
    SliceRow { a: NodeId, row: usize },
    StackRows { parts: Vec<NodeId> },
    Concat { parts: Vec<NodeId> },
    L2NormalizeRows { a: NodeId, eps: f64 },
    CrossEntropyMean { logits: NodeId, labels: Vec<usize> },
}

struct Node<F: Element> {
    shape: Vec<usize>,
    data: Vec<F>,
    op: Op,
    needs_grad: bool,
}

/// Append-only computation tape. Build one per training step.
pub struct Graph<F: Element> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Element> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Dim(format!("expected a 2-D tensor, got {other:?}"))),
    }
}

// C[m,n] += A[m,k] * B[k,n]
fn matmul_acc<F: Element>(out: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let (orow, brow) = (i * n, p * n);
            for j in 0..n {
                out[orow + j] += av * b[brow + j];
            }
        }
    }
}

// gA[m,k] += G[m,n] * B^T (B is [k,n])
fn matmul_nt_acc<F: Element>(out: &mut [F], g: &[F], b: &[F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let mut s = F::zero();
            let (grow, brow) = (i * n, p * n);
            for j in 0..n {
                s += g[grow + j] * b[brow + j];
            }
            out[i * k + p] += s;
        }
    }
}

// gB[k,n] += A^T * G (A is [m,k], G is [m,n])
fn matmul_tn_acc<F: Element>(out: &mut [F], a: &[F], g: &[F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let (orow, grow) = (p * n, i * n);
            for j in 0..n {
                out[orow + j] += av * g[grow + j];
            }
        }
    }
}

impl<F: Element> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[F] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar_value(&self, id: NodeId) -> F {
        self.nodes[id.0].data[0]
    }

    /// Gradient of the last `backward` loss w.r.t. this node, if it was
    /// reached by the backward sweep.
    pub fn grad(&self, id: NodeId) -> Option<&[F]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<F>, op: Op, needs_grad: bool) -> Result<NodeId> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {op:?}"
            )));
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        Ok(id)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A constant leaf; never receives gradient.
    pub fn constant(&mut self, t: &Tensor<F>) -> NodeId {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf { param: None },
            false,
        )
        .expect("finite tensor")
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> NodeId {
        let n: usize = shape.iter().product();
        self.push(shape, vec![F::zero(); n], Op::Leaf { param: None }, false)
            .expect("zeros are finite")
    }

    /// A free input leaf; receives gradient iff the tensor requires it.
    pub fn input(&mut self, t: &Tensor<F>) -> NodeId {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf { param: None },
            t.requires_grad,
        )
        .expect("finite tensor")
    }

    /// A parameter leaf. The stored tensor's data is copied onto the tape and
    /// gradients are routed back to the store by [`Graph::apply_param_grads`].
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        let t = store.get(id);
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf { param: Some(id) },
            t.requires_grad,
        )
        .expect("finite tensor")
    }

    /// Row lookup into a 2-D parameter (embedding table). Duplicated rows
    /// accumulate gradient once per occurrence.
    pub fn gather_rows(
        &mut self,
        store: &ParamStore<F>,
        id: ParamId,
        rows: &[usize],
    ) -> Result<NodeId> {
        let t = store.get(id);
        let (vocab, dim) = dims2(t.shape())?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for &r in rows {
            if r >= vocab {
                return Err(Error::Data(format!(
                    "row id {r} out of range for table with {vocab} rows"
                )));
            }
            data.extend_from_slice(&t.data()[r * dim..(r + 1) * dim]);
        }
        self.push(
            vec![rows.len(), dim],
            data,
            Op::Gather {
                param: id,
                rows: rows.to_vec(),
            },
            t.requires_grad,
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = dims2(self.shape(a))?;
        let (k2, n) = dims2(self.shape(b))?;
        if k != k2 {
            return Err(Error::Dim(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut data = vec![F::zero(); m * n];
        matmul_acc(&mut data, self.value(a), self.value(b), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.push(vec![m, n], data, Op::Matmul { a, b }, ng)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, cdim) = dims2(self.shape(a))?;
        let src = self.value(a);
        let mut data = vec![F::zero(); r * cdim];
        for i in 0..r {
            for j in 0..cdim {
                data[j * r + i] = src[i * cdim + j];
            }
        }
        let ng = self.needs(a);
        self.push(vec![cdim, r], data, Op::Transpose { a }, ng)
    }

    fn broadcast_pair(&self, a: NodeId, b: NodeId) -> Result<(Vec<usize>, bool, bool)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let na: usize = sa.iter().product();
        let nb: usize = sb.iter().product();
        if sa == sb {
            Ok((sa.to_vec(), false, false))
        } else if na == 1 {
            Ok((sb.to_vec(), true, false))
        } else if nb == 1 {
            Ok((sa.to_vec(), false, true))
        } else {
            Err(Error::Dim(format!(
                "incompatible shapes {sa:?} and {sb:?} (only scalar or equal-shape broadcasting)"
            )))
        }
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(F, F) -> F,
        op: Op,
    ) -> Result<NodeId> {
        let (shape, a_is_scalar, b_is_scalar) = self.broadcast_pair(a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let x = if a_is_scalar { av[0] } else { av[i] };
            let y = if b_is_scalar { bv[0] } else { bv[i] };
            data.push(f(x, y));
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(shape, data, op, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let data = self.value(a).iter().map(|&x| x + c(k)).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(shape, data, Op::AddScalar { a }, ng)
    }

    pub fn mul_scalar(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let data = self.value(a).iter().map(|&x| x * c(k)).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(shape, data, Op::MulScalar { a, k }, ng)
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(F) -> F, op: Op) -> Result<NodeId> {
        let data = self.value(a).iter().map(|&x| f(x)).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(shape, data, op, ng)
    }

    pub fn negate(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| -x, Op::Negate { a })
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| x.max_of(F::zero()), Op::Relu { a })
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| x.tanh(), Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(
            a,
            |x| {
                let v = x.to_f64();
                let s = if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                };
                c(s)
            },
            Op::Sigmoid { a },
        )
    }

    /// Clamp to `[lo, hi]`; gradient is zero outside the band.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if lo > hi {
            return Err(Error::Config(format!("clamp bounds inverted: [{lo}, {hi}]")));
        }
        self.unary(
            a,
            |x| x.max_of(c(lo)).min_of(c(hi)),
            Op::Clamp { a, lo, hi },
        )
    }

    /// The sparse activation, elementwise. `mode` selects which derivative
    /// variant the backward pass uses.
    pub fn sparse_act(
        &mut self,
        a: NodeId,
        beta: f64,
        gamma: f64,
        mode: DerivMode,
    ) -> Result<NodeId> {
        validate_sparse_params(beta, gamma)?;
        self.unary(
            a,
            |x| sparse_act(x, beta, gamma),
            Op::SparseAct {
                a,
                beta,
                gamma,
                mode,
            },
        )
    }

    /// The small-value suppressing activation, elementwise.
    pub fn leaky(&mut self, a: NodeId, kappa: f64, theta: f64) -> Result<NodeId> {
        validate_leaky_params(kappa, theta)?;
        self.unary(a, |x| leaky(x, kappa, theta), Op::Leaky { a, kappa, theta })
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let mut s = F::zero();
        for &x in self.value(a) {
            s += x;
        }
        let ng = self.needs(a);
        self.push(vec![1], vec![s], Op::Sum { a }, ng)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len();
        let mut s = F::zero();
        for &x in self.value(a) {
            s += x;
        }
        let ng = self.needs(a);
        self.push(vec![1], vec![s / c(n as f64)], Op::Mean { a }, ng)
    }

    /// Sum over the last axis: `(r, c) -> (r,)`.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, cdim) = dims2(self.shape(a))?;
        let v = self.value(a);
        let data = (0..r)
            .map(|i| {
                let mut s = F::zero();
                for j in 0..cdim {
                    s += v[i * cdim + j];
                }
                s
            })
            .collect();
        let ng = self.needs(a);
        self.push(vec![r], data, Op::RowSum { a }, ng)
    }

    /// `sqrt(x + eps)`, elementwise; `eps > 0` keeps the gradient finite at 0.
    pub fn sqrt_eps(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        if eps <= 0.0 {
            return Err(Error::Config("sqrt_eps requires eps > 0".into()));
        }
        self.unary(a, |x| (x + c(eps)).sqrt(), Op::SqrtEps { a, eps })
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(Error::Dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(a),
                shape
            )));
        }
        let data = self.value(a).to_vec();
        let ng = self.needs(a);
        self.push(shape, data, Op::Reshape { a }, ng)
    }

    /// Extract row `row` of a 2-D tensor as a 1-D tensor.
    pub fn slice_row(&mut self, a: NodeId, row: usize) -> Result<NodeId> {
        let (r, cdim) = dims2(self.shape(a))?;
        if row >= r {
            return Err(Error::Dim(format!("row {row} out of range for {r} rows")));
        }
        let data = self.value(a)[row * cdim..(row + 1) * cdim].to_vec();
        let ng = self.needs(a);
        self.push(vec![cdim], data, Op::SliceRow { a, row }, ng)
    }

    /// Stack equal-length 1-D tensors into a `(parts, len)` matrix.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dim("stack_rows of zero tensors".into()));
        }
        let len = self.value(parts[0]).len();
        let mut data = Vec::with_capacity(parts.len() * len);
        let mut ng = false;
        for &p in parts {
            if self.shape(p).len() != 1 || self.value(p).len() != len {
                return Err(Error::Dim(format!(
                    "stack_rows parts must be 1-D of equal length, got {:?}",
                    self.shape(p)
                )));
            }
            data.extend_from_slice(self.value(p));
            ng |= self.needs(p);
        }
        self.push(
            vec![parts.len(), len],
            data,
            Op::StackRows {
                parts: parts.to_vec(),
            },
            ng,
        )
    }

    /// Concatenate 1-D tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dim("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        let mut ng = false;
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::Dim("concat expects 1-D tensors".into()));
            }
            data.extend_from_slice(self.value(p));
            ng |= self.needs(p);
        }
        let n = data.len();
        self.push(
            vec![n],
            data,
            Op::Concat {
                parts: parts.to_vec(),
            },
            ng,
        )
    }

    /// Normalize each row to unit L2 norm, with `norm = sqrt(sum + eps)`.
    pub fn l2_normalize_rows(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let (r, cdim) = dims2(self.shape(a))?;
        let v = self.value(a);
        let mut data = Vec::with_capacity(r * cdim);
        for i in 0..r {
            let row = &v[i * cdim..(i + 1) * cdim];
            let mut s = 0.0;
            for &x in row {
                s += x.to_f64() * x.to_f64();
            }
            let n = (s + eps).sqrt();
            for &x in row {
                data.push(c::<F>(x.to_f64() / n));
            }
        }
        let ng = self.needs(a);
        self.push(vec![r, cdim], data, Op::L2NormalizeRows { a, eps }, ng)
    }

    /// Mean softmax cross-entropy over rows of `logits` against integer
    /// labels. Fused op: backward is `(softmax - onehot) / batch`.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (rows, classes) = dims2(self.shape(logits))?;
        if labels.len() != rows {
            return Err(Error::Dim(format!(
                "{} labels for {} logit rows",
                labels.len(),
                rows
            )));
        }
        let v = self.value(logits);
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::Data(format!(
                    "label {label} out of range for {classes} classes"
                )));
            }
            let row = &v[i * classes..(i + 1) * classes];
            let m = row
                .iter()
                .fold(f64::NEG_INFINITY, |acc, &x| acc.max(x.to_f64()));
            let lse = m + row.iter().map(|&x| (x.to_f64() - m).exp()).sum::<f64>().ln();
            total += lse - row[label].to_f64();
        }
        let ng = self.needs(logits);
        self.push(
            vec![1],
            vec![c(total / rows as f64)],
            Op::CrossEntropyMean {
                logits,
                labels: labels.to_vec(),
            },
            ng,
        )
    }

    /// Reverse sweep from a scalar loss. Populates per-node gradients; fetch
    /// them with [`Graph::grad`] or push parameter gradients into the store
    /// with [`Graph::apply_param_grads`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Config(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![F::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            backprop_node(&self.nodes, &mut self.grads, id, &g);
            self.grads[id] = Some(g);
        }
        for g in self.grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite gradient".into()));
            }
        }
        Ok(())
    }

    /// Accumulate leaf gradients into the parameter store.
    pub fn apply_param_grads(&self, store: &mut ParamStore<F>) {
        for (idx, node) in self.nodes.iter().enumerate() {
            let Some(g) = self.grads.get(idx).and_then(|o| o.as_ref()) else {
                continue;
            };
            match &node.op {
                Op::Leaf { param: Some(pid) } => store.get_mut(*pid).accumulate_grad(g),
                Op::Gather { param, rows } => {
                    let t = store.get_mut(*param);
                    let dim = t.shape()[1];
                    let numel = t.numel();
                    let buf = t.grad.get_or_insert_with(|| vec![F::zero(); numel]);
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..dim {
                            buf[r * dim + j] += g[k * dim + j];
                        }
                    }
                }
                _ => {}
            }
        }
    }
}

fn ensure<F: Element>(grads: &mut [Option<Vec<F>>], id: usize, len: usize) -> &mut [F] {
    grads[id].get_or_insert_with(|| vec![F::zero(); len])
}

fn backprop_node<F: Element>(
    nodes: &[Node<F>],
    grads: &mut [Option<Vec<F>>],
    id: usize,
    g: &[F],
) {
    let needs = |n: NodeId| nodes[n.0].needs_grad;
    let numel = |n: NodeId| nodes[n.0].data.len();
    match &nodes[id].op {
        Op::Leaf { .. } | Op::Gather { .. } => {}
        Op::Matmul { a, b } => {
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            if needs(*a) {
                let ga = ensure(grads, a.0, m * k);
                matmul_nt_acc(ga, g, &nodes[b.0].data, m, k, n);
            }
            if needs(*b) {
                let gb = ensure(grads, b.0, k * n);
                matmul_tn_acc(gb, &nodes[a.0].data, g, m, k, n);
            }
        }
        Op::Transpose { a } => {
            if needs(*a) {
                let (r, cdim) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let ga = ensure(grads, a.0, r * cdim);
                for i in 0..r {
                    for j in 0..cdim {
                        ga[i * cdim + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Add { a, b } | Op::Sub { a, b } => {
            let negate_b = matches!(nodes[id].op, Op::Sub { .. });
            for (side, flip) in [(a, false), (b, negate_b)] {
                if !needs(*side) {
                    continue;
                }
                let n = numel(*side);
                let gs = ensure(grads, side.0, n);
                if n == 1 && g.len() > 1 {
                    let mut s = F::zero();
                    for &gi in g {
                        s += gi;
                    }
                    gs[0] += if flip { -s } else { s };
                } else {
                    for (o, &gi) in gs.iter_mut().zip(g) {
                        *o += if flip { -gi } else { gi };
                    }
                }
            }
        }
        Op::Mul { a, b } => {
            let (na, nb) = (numel(*a), numel(*b));
            let bv = &nodes[b.0].data;
            let av = &nodes[a.0].data;
            if needs(*a) {
                let ga = ensure(grads, a.0, na);
                if na == 1 && g.len() > 1 {
                    let mut s = F::zero();
                    for (i, &gi) in g.iter().enumerate() {
                        s += gi * bv[if nb == 1 { 0 } else { i }];
                    }
                    ga[0] += s;
                } else {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[if nb == 1 { 0 } else { i }];
                    }
                }
            }
            if needs(*b) {
                let gb = ensure(grads, b.0, nb);
                if nb == 1 && g.len() > 1 {
                    let mut s = F::zero();
                    for (i, &gi) in g.iter().enumerate() {
                        s += gi * av[if na == 1 { 0 } else { i }];
                    }
                    gb[0] += s;
                } else {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[if na == 1 { 0 } else { i }];
                    }
                }
            }
        }
        Op::AddScalar { a } => {
            if needs(*a) {
                let ga = ensure(grads, a.0, g.len());
                for (o, &gi) in ga.iter_mut().zip(g) {
                    *o += gi;
                }
            }
        }
        Op::MulScalar { a, k } => {
            if needs(*a) {
                let ga = ensure(grads, a.0, g.len());
                for (o, &gi) in ga.iter_mut().zip(g) {
                    *o += gi * c(*k);
                }
            }
        }
        Op::Negate { a } => {
            if needs(*a) {
                let ga = ensure(grads, a.0, g.len());
                for (o, &gi) in ga.iter_mut().zip(g) {
                    *o += -gi;
                }
            }
        }
        Op::Relu { a } => {
            if needs(*a) {
                let av = &nodes[a.0].data;
                let ga = ensure(grads, a.0, g.len());
                for i in 0..g.len() {
                    if av[i] > F::zero() {
                        ga[i] += g[i];
                    }
                }
            }
        }
        Op::Tanh { a } => {
            if needs(*a) {
                let yv = &nodes[id].data;
                let ga = ensure(grads, a.0, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * (F::one() - yv[i] * yv[i]);
                }
            }
        }
        Op::Sigmoid { a } => {
            if needs(*a) {
                let yv = &nodes[id].data;
                let ga = ensure(grads, a.0, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * yv[i] * (F::one() - yv[i]);
                }
            }
        }
        Op::Clamp { a, lo, hi } => {
            if needs(*a) {
                let av = &nodes[a.0].data;
                let ga = ensure(grads, a.0, g.len());
                for i in 0..g.len() {
                    let x = av[i].to_f64();
                    if x >= *lo && x <= *hi {
                        ga[i] += g[i];
                    }
                }
            }
        }
        Op::SparseAct {
            a,
            beta,
            gamma,
            mode,
        } => {
            if needs(*a) {
                let av = &nodes[a.0].data;
                let ga = ensure(grads, a.0, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * sparse_act_deriv(av[i], *beta, *gamma, *mode);
                }
            }
        }
        Op::Leaky { a, kappa, theta } => {
            if needs(*a) {
                let av = &nodes[a.0].data;
                let ga = ensure(grads, a.0, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * leaky_deriv(av[i], *kappa, *theta);
                }
            }
        }
        Op::Sum { a } => {
            if needs(*a) {
                let n = numel(*a);
                let ga = ensure(grads, a.0, n);
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            }
        }
        Op::Mean { a } => {
            if needs(*a) {
                let n = numel(*a);
                let scale = c::<F>(1.0 / n as f64);
                let ga = ensure(grads, a.0, n);
                for o in ga.iter_mut() {
                    *o += g[0] * scale;
                }
            }
        }
        Op::RowSum { a } => {
            if needs(*a) {
                let (r, cdim) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let ga = ensure(grads, a.0, r * cdim);
                for i in 0..r {
                    for j in 0..cdim {
                        ga[i * cdim + j] += g[i];
                    }
                }
            }
        }
        Op::SqrtEps { a, .. } => {
            if needs(*a) {
                let yv = &nodes[id].data;
                let ga = ensure(grads, a.0, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * c(0.5 / yv[i].to_f64());
                }
            }
        }
        Op::Reshape { a } => {
            if needs(*a) {
                let ga = ensure(grads, a.0, g.len());
                for (o, &gi) in ga.iter_mut().zip(g) {
                    *o += gi;
                }
            }
        }
        Op::SliceRow { a, row } => {
            if needs(*a) {
                let (_, cdim) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = numel(*a);
                let ga = ensure(grads, a.0, n);
                for j in 0..cdim {
                    ga[row * cdim + j] += g[j];
                }
            }
        }
        Op::StackRows { parts } => {
            let len = if parts.is_empty() {
                0
            } else {
                numel(parts[0])
            };
            for (k, p) in parts.iter().enumerate() {
                if needs(*p) {
                    let gp = ensure(grads, p.0, len);
                    for j in 0..len {
                        gp[j] += g[k * len + j];
                    }
                }
            }
        }
        Op::Concat { parts } => {
            let mut offset = 0;
            for p in parts {
                let n = numel(*p);
                if needs(*p) {
                    let gp = ensure(grads, p.0, n);
                    for j in 0..n {
                        gp[j] += g[offset + j];
                    }
                }
                offset += n;
            }
        }
        Op::L2NormalizeRows { a, eps } => {
            if needs(*a) {
                let (r, cdim) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let av = &nodes[a.0].data;
                let ga = ensure(grads, a.0, r * cdim);
                for i in 0..r {
                    let row = &av[i * cdim..(i + 1) * cdim];
                    let grow = &g[i * cdim..(i + 1) * cdim];
                    let mut s = 0.0;
                    let mut dot = 0.0;
                    for j in 0..cdim {
                        s += row[j].to_f64() * row[j].to_f64();
                        dot += grow[j].to_f64() * row[j].to_f64();
                    }
                    let n = (s + eps).sqrt();
                    let n3 = n * n * n;
                    for j in 0..cdim {
                        ga[i * cdim + j] +=
                            c::<F>(grow[j].to_f64() / n - row[j].to_f64() * dot / n3);
                    }
                }
            }
        }
        Op::CrossEntropyMean { logits, labels } => {
            if needs(*logits) {
                let (rows, classes) = (nodes[logits.0].shape[0], nodes[logits.0].shape[1]);
                let lv = &nodes[logits.0].data;
                let gl = ensure(grads, logits.0, rows * classes);
                let scale = g[0].to_f64() / rows as f64;
                for (i, &label) in labels.iter().enumerate() {
                    let row = &lv[i * classes..(i + 1) * classes];
                    let m = row
                        .iter()
                        .fold(f64::NEG_INFINITY, |acc, &x| acc.max(x.to_f64()));
                    let denom: f64 = row.iter().map(|&x| (x.to_f64() - m).exp()).sum();
                    for j in 0..classes {
                        let p = (row[j].to_f64() - m).exp() / denom;
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        gl[i * classes + j] += c((p - onehot) * scale);
                    }
                }
            }
        }
    }
}
