//! Tape-based reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles. Values are
//! computed eagerly, so the same graph serves inference (`record = false`,
//! nothing kept for backward beyond the values themselves) and training.
//! [`Graph::backward`] walks the tape in reverse from a scalar loss and returns
//! one gradient per parameter of the borrowed [`ParamStore`]; parameters the
//! loss does not reach get zeros.

use std::borrow::Cow;

use crate::error::UsageError;
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Param(usize),
    /// `a · wᵀ` with `a: m×k`, `w: n×k`.
    MatMulNT(Var, Var),
    MatMul(Var, Var),
    /// Row-broadcast bias add.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SoftmaxRows(Var),
    /// `out[b] = Σ_i alpha[b, i] · slots[i][b]`, summed in slot order.
    MixRows { alpha: Var, slots: Vec<Var> },
    /// Row-wise cosine similarity; zero-norm rows score 0.
    CosineRows(Var, Var),
    SumAll(Var),
    AsymSq { pred: Var, target: Var, alpha: S },
    Bce { p: Var, labels: Var },
    SqDist(Var, Var),
}

struct Node<'p, S: Scalar> {
    value: Cow<'p, Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
}

/// Probability clamp used by the binary cross-entropy node.
pub const BCE_CLAMP: f64 = 1e-7;

pub struct Graph<'p, S: Scalar> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<'p, S>>,
    param_nodes: Vec<Option<Var>>,
    record: bool,
}

/// Gradients aligned with the parameter store.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    pub grads: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.grads[id.index()]
    }

    pub fn global_norm(&self) -> S {
        self.grads.iter().map(Tensor::sum_squares).sum::<S>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: S) -> S {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let k = max_norm / norm;
            for g in &mut self.grads {
                for v in g.data_mut() {
                    *v *= k;
                }
            }
        }
        norm
    }
}

impl<'p, S: Scalar> Graph<'p, S> {
    /// Graph that records operations for a later [`backward`](Self::backward).
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Self::with_recording(params, true)
    }

    /// Value-only evaluation; `backward` is unavailable.
    pub fn inference(params: &'p ParamStore<S>) -> Self {
        Self::with_recording(params, false)
    }

    fn with_recording(params: &'p ParamStore<S>, record: bool) -> Self {
        Self { params, nodes: Vec::with_capacity(256), param_nodes: vec![None; params.len()], record }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, parents: &[Var]) -> Var {
        let needs_grad = self.record && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.nodes.push(Node { value: Cow::Owned(t), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        let t = self.params.get(id);
        let needs_grad = self.record && t.requires_grad;
        self.nodes.push(Node { value: Cow::Borrowed(t), op: Op::Param(id.index()), needs_grad });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    pub fn matmul_nt(&mut self, a: Var, w: Var) -> Var {
        let (av, wv) = (self.value(a), self.value(w));
        let (m, k, n) = (av.rows(), av.cols(), wv.rows());
        assert_eq!(k, wv.cols(), "matmul_nt inner dimension");
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, S::one(), av.data(), (k as isize, 1), wv.data(), (1, k as isize), S::zero(), &mut out, (n as isize, 1));
        self.push(Tensor::matrix(m, n, out), Op::MatMulNT(a, w), &[a, w])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        let n = av.cols();
        assert_eq!(bv.len(), n, "bias width");
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let out = Tensor::matrix(av.rows(), n, out);
        self.push(out, Op::AddBias(a, bias), &[a, bias])
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "elementwise operand sizes");
        let out = Tensor::matrix(av.rows(), av.cols(), av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect());
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(S::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows(), rows, "concat row count");
                out.extend_from_slice(v.row_slice(r));
            }
        }
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let av = self.value(a);
        assert!(start + width <= av.cols(), "slice out of range");
        let mut out = Vec::with_capacity(av.rows() * width);
        for r in 0..av.rows() {
            out.extend_from_slice(&av.row_slice(r)[start..start + width]);
        }
        let out = Tensor::matrix(av.rows(), width, out);
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Vec::with_capacity(av.len());
        for r in 0..av.rows() {
            out.extend(softmax(av.row_slice(r)));
        }
        let out = Tensor::matrix(av.rows(), av.cols(), out);
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn mix_rows(&mut self, alpha: Var, slots: &[Var]) -> Var {
        let av = self.value(alpha);
        assert_eq!(av.cols(), slots.len(), "one weight column per slot");
        let (rows, width) = (av.rows(), self.value(slots[0]).cols());
        let mut out = vec![S::zero(); rows * width];
        for r in 0..rows {
            let o = &mut out[r * width..(r + 1) * width];
            for (i, &s) in slots.iter().enumerate() {
                let w = av.row_slice(r)[i];
                for (x, &e) in o.iter_mut().zip(self.value(s).row_slice(r)) {
                    *x += w * e;
                }
            }
        }
        let mut parents = vec![alpha];
        parents.extend_from_slice(slots);
        self.push(Tensor::matrix(rows, width, out), Op::MixRows { alpha, slots: slots.to_vec() }, &parents)
    }

    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "cosine operand widths");
        let out: Vec<S> = (0..av.rows()).map(|r| cosine(av.row_slice(r), bv.row_slice(r))).collect();
        self.push(Tensor::matrix(av.rows(), 1, out), Op::CosineRows(a, b), &[a, b])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::matrix(1, 1, vec![s]), Op::SumAll(a), &[a])
    }

    /// `Σ g(d)²` with `d = target − pred`, `g(d) = d` for `d ≤ 0` and `alpha·d` otherwise.
    pub fn asym_sq(&mut self, pred: Var, target: Var, alpha: S) -> Var {
        let s = asym_sq_value(self.value(pred).data(), self.value(target).data(), alpha);
        self.push(Tensor::matrix(1, 1, vec![s]), Op::AsymSq { pred, target, alpha }, &[pred, target])
    }

    /// Summed binary cross-entropy with probabilities clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce(&mut self, p: Var, labels: Var) -> Var {
        let s = bce_value(self.value(p).data(), self.value(labels).data());
        self.push(Tensor::matrix(1, 1, vec![s]), Op::Bce { p, labels }, &[p, labels])
    }

    /// `Σ (a − b)²`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Var {
        let s = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        self.push(Tensor::matrix(1, 1, vec![s]), Op::SqDist(a, b), &[a, b])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, UsageError> {
        if !self.record {
            return Err(UsageError::new("backward on an inference graph"));
        }
        if self.value(loss).len() != 1 {
            return Err(UsageError::new(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), S::one()));
        let mut out: Vec<Tensor<S>> = self.params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    accumulate_into(&mut out[*pid], &g);
                }
                Op::MatMulNT(a, w) => {
                    let (av, wv) = (self.value(*a), self.value(*w));
                    let (m, k, n) = (av.rows(), av.cols(), wv.rows());
                    if self.nodes[a.0].needs_grad {
                        let mut da = vec![S::zero(); m * k];
                        S::gemm(m, n, k, S::one(), g.data(), (n as isize, 1), wv.data(), (k as isize, 1), S::zero(), &mut da, (k as isize, 1));
                        add_grad(&mut grads, *a, Tensor::matrix(m, k, da));
                    }
                    if self.nodes[w.0].needs_grad {
                        let mut dw = vec![S::zero(); n * k];
                        S::gemm(n, m, k, S::one(), g.data(), (1, n as isize), av.data(), (k as isize, 1), S::zero(), &mut dw, (k as isize, 1));
                        add_grad(&mut grads, *w, Tensor::matrix(n, k, dw).reshape(wv.shape().to_vec()));
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].needs_grad {
                        add_grad(&mut grads, *a, g.matmul(&bv.transpose()).reshape(av.shape().to_vec()));
                    }
                    if self.nodes[b.0].needs_grad {
                        add_grad(&mut grads, *b, av.transpose().matmul(&g).reshape(bv.shape().to_vec()));
                    }
                }
                Op::AddBias(a, b) => {
                    if self.nodes[b.0].needs_grad {
                        let n = g.cols();
                        let mut db = vec![S::zero(); n];
                        for row in g.data().chunks(n) {
                            for (d, &x) in db.iter_mut().zip(row) {
                                *d += x;
                            }
                        }
                        let shape = self.value(*b).shape().to_vec();
                        add_grad(&mut grads, *b, Tensor::new(shape, db).expect("bias grad"));
                    }
                    add_grad(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, *b, g.clone());
                    add_grad(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, *b, g.map(|x| -x));
                    add_grad(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    add_grad(&mut grads, *a, g.zip_map(bv, |x, y| x * y));
                    add_grad(&mut grads, *b, g.zip_map(av, |x, y| x * y));
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    add_grad(&mut grads, *a, g.map(|x| x * k));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    add_grad(&mut grads, *a, g.zip_map(y, |x, y| x * y * (S::one() - y)));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    add_grad(&mut grads, *a, g.zip_map(y, |x, y| x * (S::one() - y * y)));
                }
                Op::Relu(a) => {
                    let xv = self.value(*a);
                    add_grad(&mut grads, *a, g.zip_map(xv, |d, x| if x > S::zero() { d } else { S::zero() }));
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.nodes[p.0].needs_grad {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                            }
                            add_grad(&mut grads, p, Tensor::matrix(rows, w, d).reshape(self.value(p).shape().to_vec()));
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let (rows, cols, w) = (av.rows(), av.cols(), g.cols());
                    let mut d = vec![S::zero(); rows * cols];
                    for r in 0..rows {
                        d[r * cols + start..r * cols + start + w].copy_from_slice(g.row_slice(r));
                    }
                    add_grad(&mut grads, *a, Tensor::matrix(rows, cols, d).reshape(av.shape().to_vec()));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut d = Vec::with_capacity(y.len());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        d.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dot)));
                    }
                    add_grad(&mut grads, *a, Tensor::matrix(y.rows(), n, d));
                }
                Op::MixRows { alpha, slots } => {
                    let av = self.value(*alpha);
                    let rows = av.rows();
                    if self.nodes[alpha.0].needs_grad {
                        let mut da = Vec::with_capacity(av.len());
                        for r in 0..rows {
                            for &s in slots {
                                let e = self.value(s).row_slice(r);
                                da.push(e.iter().zip(g.row_slice(r)).map(|(&x, &y)| x * y).sum());
                            }
                        }
                        add_grad(&mut grads, *alpha, Tensor::matrix(rows, slots.len(), da));
                    }
                    for (i, &s) in slots.iter().enumerate() {
                        if !self.nodes[s.0].needs_grad {
                            continue;
                        }
                        let w = g.cols();
                        let mut ds = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            let k = av.row_slice(r)[i];
                            ds.extend(g.row_slice(r).iter().map(|&x| x * k));
                        }
                        add_grad(&mut grads, s, Tensor::matrix(rows, w, ds));
                    }
                }
                Op::CosineRows(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (rows, w) = (av.rows(), av.cols());
                    let mut da = vec![S::zero(); rows * w];
                    let mut db = vec![S::zero(); rows * w];
                    for r in 0..rows {
                        let (x, y) = (av.row_slice(r), bv.row_slice(r));
                        let nx = x.iter().map(|&v| v * v).sum::<S>().sqrt();
                        let ny = y.iter().map(|&v| v * v).sum::<S>().sqrt();
                        if nx == S::zero() || ny == S::zero() {
                            continue;
                        }
                        let c = node.value.data()[r];
                        let gr = g.data()[r];
                        for j in 0..w {
                            da[r * w + j] = gr * (y[j] / (nx * ny) - c * x[j] / (nx * nx));
                            db[r * w + j] = gr * (x[j] / (nx * ny) - c * y[j] / (ny * ny));
                        }
                    }
                    add_grad(&mut grads, *a, Tensor::matrix(rows, w, da));
                    add_grad(&mut grads, *b, Tensor::matrix(rows, w, db));
                }
                Op::SumAll(a) => {
                    let av = self.value(*a);
                    add_grad(&mut grads, *a, Tensor::full(av.shape(), g.data()[0]));
                }
                Op::AsymSq { pred, target, alpha } => {
                    let (pv, tv) = (self.value(*pred), self.value(*target));
                    let (gs, a2) = (g.data()[0], *alpha * *alpha);
                    let two = S::one() + S::one();
                    // dh/dd for h(d) = g(d)^2
                    let dh = tv.zip_map(pv, |t, p| {
                        let d = t - p;
                        if d <= S::zero() {
                            two * d * gs
                        } else {
                            two * a2 * d * gs
                        }
                    });
                    add_grad(&mut grads, *pred, dh.map(|x| -x).reshape(pv.shape().to_vec()));
                    add_grad(&mut grads, *target, dh.reshape(tv.shape().to_vec()));
                }
                Op::Bce { p, labels } => {
                    let (pv, lv) = (self.value(*p), self.value(*labels));
                    let gs = g.data()[0];
                    let lo = S::from_f64_lossy(BCE_CLAMP);
                    let hi = S::one() - lo;
                    let d = pv.zip_map(lv, |p, y| {
                        if p < lo || p > hi {
                            S::zero()
                        } else {
                            gs * ((S::one() - y) / (S::one() - p) - y / p)
                        }
                    });
                    add_grad(&mut grads, *p, d);
                }
                Op::SqDist(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let two = S::one() + S::one();
                    let gs = g.data()[0];
                    let d = av.zip_map(bv, |x, y| two * (x - y) * gs);
                    add_grad(&mut grads, *b, d.map(|x| -x).reshape(bv.shape().to_vec()));
                    add_grad(&mut grads, *a, d.reshape(av.shape().to_vec()));
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate_into<S: Scalar>(dst: &mut Tensor<S>, g: &Tensor<S>) {
    assert_eq!(dst.len(), g.len(), "gradient size");
    for (d, &x) in dst.data_mut().iter_mut().zip(g.data()) {
        *d += x;
    }
}

fn add_grad<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
    match &mut grads[v.0] {
        Some(acc) => accumulate_into(acc, &g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Max-shifted softmax.
pub fn softmax<S: Scalar>(x: &[S]) -> Vec<S> {
    let m = x.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = x.iter().map(|&v| (v - m).exp()).collect();
    let z: S = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let na = a.iter().map(|&v| v * v).sum::<S>().sqrt();
    let nb = b.iter().map(|&v| v * v).sum::<S>().sqrt();
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    a.iter().zip(b).map(|(&x, &y)| x * y).sum::<S>() / (na * nb)
}

pub fn asym_sq_value<S: Scalar>(pred: &[S], target: &[S], alpha: S) -> S {
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = t - p;
            let g = if d <= S::zero() { d } else { alpha * d };
            g * g
        })
        .sum()
}

pub fn bce_value<S: Scalar>(p: &[S], labels: &[S]) -> S {
    let lo = S::from_f64_lossy(BCE_CLAMP);
    let hi = S::one() - lo;
    p.iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.max(lo).min(hi);
            -(y * p.ln() + (S::one() - y) * (S::one() - p).ln())
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let n = values.len();
        let id = s.insert("x", Tensor::matrix(1, n, values)).unwrap();
        (s, id)
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let (s, id) = store_with(vec![1.0, -2.0]);
        let mut g = Graph::new(&s);
        let _x = g.param(id);
        let c = g.constant(Tensor::matrix(1, 1, vec![3.0]));
        let loss = g.sum_all(c);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(id).data(), &[0.0, 0.0]);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_x() {
        let (s, id) = store_with(vec![1.5, -2.0, 0.25]);
        let mut g = Graph::new(&s);
        let x = g.param(id);
        let sq = g.mul(x, x);
        let loss = g.sum_all(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(id).data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (s, id) = store_with(vec![1.0, 2.0]);
        let mut g = Graph::new(&s);
        let x = g.param(id);
        assert!(g.backward(x).is_err());
        let mut inf = Graph::inference(&s);
        let x = inf.param(id);
        let l = inf.sum_all(x);
        assert!(inf.backward(l).is_err());
    }

    #[test]
    fn unreached_parameter_gets_zeros() {
        let mut s = ParamStore::<f64>::new();
        let a = s.insert("a", Tensor::matrix(1, 2, vec![1.0, 2.0])).unwrap();
        let b = s.insert("b", Tensor::matrix(2, 2, vec![1.0; 4])).unwrap();
        let mut g = Graph::new(&s);
        let x = g.param(a);
        let l = g.sum_all(x);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).data(), &[1.0, 1.0]);
        assert_eq!(grads.get(b).data(), &[0.0; 4]);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let x = [0.3f64, -1.0, 2.0, 0.0];
        let y = softmax(&x);
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
        for (a, b) in y.iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_global_norm_rescales() {
        let mut g = Gradients { grads: vec![Tensor::matrix(1, 2, vec![3.0f64, 4.0])] };
        let before = g.clip_global_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
