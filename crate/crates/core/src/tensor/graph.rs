//! Reverse-mode differentiation over a fixed set of tensor primitives.
//!
//! A [`Graph`] is an append-only record: each node holds its forward value
//! and the primitive that produced it. Node ids only ever reference earlier
//! nodes, so reverse insertion order is a valid backward order.

use super::{
    add, axis_extents, gelu, gelu_grad_scalar, layer_norm_with_stats, log_softmax, matmul, mul,
    permute, scale, softmax, transpose_last, NormStats, Tensor,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Softmax(NodeId, usize),
    LogSoftmax(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: NormStats<T>,
    },
    Gelu(NodeId),
    Dropout(NodeId, Tensor<T>),
    Reshape(NodeId),
    Permute(NodeId, Vec<usize>),
    Mean(NodeId),
    PrependToken(NodeId, NodeId),
    SelectToken(NodeId, usize),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss, indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Sums `g` over its leading axes down to `shape` (a suffix of `g`'s shape).
fn reduce_to<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let period: usize = shape.iter().product();
    let mut out = vec![T::zero(); period];
    for chunk in g.data().chunks(period) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::new(shape.to_vec(), out).expect("reduced shape is consistent")
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

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Param)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Param,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = mul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> NodeId {
        let v = scale(self.value(x), s);
        self.push(v, Op::Scale(x, s), &[x])
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let v = softmax(self.value(x), axis)?;
        Ok(self.push(v, Op::Softmax(x, axis), &[x]))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = log_softmax(self.value(x))?;
        Ok(self.push(v, Op::LogSoftmax(x), &[x]))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> Result<NodeId> {
        let (v, stats) = layer_norm_with_stats(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let v = gelu(self.value(x));
        self.push(v, Op::Gelu(x), &[x])
    }

    /// Multiplies by a fixed (already scaled) dropout mask.
    pub fn dropout(&mut self, x: NodeId, mask: Tensor<T>) -> Result<NodeId> {
        if mask.shape() != self.value(x).shape() {
            return Err(Error::Dimension(format!(
                "dropout mask {:?} does not match input {:?}",
                mask.shape(),
                self.value(x).shape()
            )));
        }
        let v = mul(self.value(x), &mask)?;
        Ok(self.push(v, Op::Dropout(x, mask), &[x]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let v = permute(self.value(x), perm)?;
        Ok(self.push(v, Op::Permute(x, perm.to_vec()), &[x]))
    }

    /// Mean of all elements, as a 0-d tensor.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).mean());
        self.push(v, Op::Mean(x), &[x])
    }

    /// `[B, N, D]` with a `[D]` token prepended to every sequence.
    pub fn prepend_token(&mut self, x: NodeId, token: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ts = self.value(token).shape().to_vec();
        if xs.len() != 3 || ts != [xs[2]] {
            return Err(Error::Dimension(format!(
                "prepend_token: token {ts:?} does not fit sequence {xs:?}"
            )));
        }
        let (b, n, d) = (xs[0], xs[1], xs[2]);
        let mut out = Vec::with_capacity(b * (n + 1) * d);
        for seq in self.value(x).data().chunks(n * d) {
            out.extend_from_slice(self.value(token).data());
            out.extend_from_slice(seq);
        }
        let v = Tensor::new(vec![b, n + 1, d], out)?;
        Ok(self.push(v, Op::PrependToken(x, token), &[x, token]))
    }

    /// `[B, T, D]` -> `[B, D]` picking sequence position `index`.
    pub fn select_token(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 || index >= xs[1] {
            return Err(Error::Dimension(format!(
                "select_token: position {index} invalid for {xs:?}"
            )));
        }
        let (t, d) = (xs[1], xs[2]);
        let mut out = Vec::with_capacity(xs[0] * d);
        for seq in self.value(x).data().chunks(t * d) {
            out.extend_from_slice(&seq[index * d..(index + 1) * d]);
        }
        let v = Tensor::new(vec![xs[0], d], out)?;
        Ok(self.push(v, Op::SelectToken(x, index), &[x]))
    }

    /// Reverse-mode gradients of the scalar `loss`.
    ///
    /// Every trainable leaf receives a gradient of its own shape (zeros if
    /// it does not influence the loss).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 || lv.ndim() > 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![T::one()])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let want = |id: NodeId| self.nodes[id.0].requires_grad;
            match &node.op {
                Op::Input | Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if want(*a) {
                        accumulate(&mut grads[a.0], matmul(&g, &transpose_last(bv)?)?);
                    }
                    if want(*b) {
                        let gb = if bv.ndim() == 2 && av.ndim() > 2 {
                            let k = av.shape()[av.ndim() - 1];
                            let n = g.shape()[g.ndim() - 1];
                            let a2 = av.reshape(&[av.len() / k, k])?;
                            let g2 = g.reshape(&[g.len() / n, n])?;
                            matmul(&transpose_last(&a2)?, &g2)?
                        } else {
                            matmul(&transpose_last(av)?, &g)?
                        };
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Add(a, b) => {
                    if want(*b) {
                        accumulate(&mut grads[b.0], reduce_to(&g, self.value(*b).shape()));
                    }
                    if want(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Mul(a, b) => {
                    if want(*a) {
                        accumulate(&mut grads[a.0], mul(&g, self.value(*b))?);
                    }
                    if want(*b) {
                        let prod = mul(&g, self.value(*a))?;
                        accumulate(&mut grads[b.0], reduce_to(&prod, self.value(*b).shape()));
                    }
                }
                Op::Scale(x, s) => {
                    accumulate(&mut grads[x.0], scale(&g, *s));
                }
                Op::Softmax(x, axis) => {
                    let y = &node.value;
                    let (outer, dim, inner) = axis_extents(y.shape(), *axis);
                    let mut gx = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * dim * inner + j * inner + i;
                            let dot: T = (0..dim).map(|j| g.data()[at(j)] * y.data()[at(j)]).sum();
                            for j in 0..dim {
                                gx[at(j)] = y.data()[at(j)] * (g.data()[at(j)] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], Tensor::new(y.shape().to_vec(), gx)?);
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let d = y.shape()[y.ndim() - 1];
                    let mut gx = Vec::with_capacity(y.len());
                    for (grow, yrow) in g.data().chunks(d).zip(y.data().chunks(d)) {
                        let total: T = grow.iter().copied().sum();
                        gx.extend(grow.iter().zip(yrow).map(|(&gv, &yv)| gv - yv.exp() * total));
                    }
                    accumulate(&mut grads[x.0], Tensor::new(y.shape().to_vec(), gx)?);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    stats,
                } => {
                    let xv = self.value(*x);
                    let gam = self.value(*gamma).data();
                    let d = gam.len();
                    let dn = T::from_usize_lossy(d);
                    let mut gx = Vec::with_capacity(xv.len());
                    let mut ggamma = vec![T::zero(); d];
                    let mut gbeta = vec![T::zero(); d];
                    for (r, (xrow, grow)) in xv.data().chunks(d).zip(g.data().chunks(d)).enumerate() {
                        let (mean, rstd) = (stats.mean[r], stats.rstd[r]);
                        let xhat: Vec<T> = xrow.iter().map(|&v| (v - mean) * rstd).collect();
                        let gxhat: Vec<T> = grow.iter().zip(gam).map(|(&gv, &gm)| gv * gm).collect();
                        let sum_g: T = gxhat.iter().copied().sum();
                        let sum_gx: T = gxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            ggamma[j] += grow[j] * xhat[j];
                            gbeta[j] += grow[j];
                            gx.push(rstd / dn * (dn * gxhat[j] - sum_g - xhat[j] * sum_gx));
                        }
                    }
                    if want(*gamma) {
                        accumulate(&mut grads[gamma.0], Tensor::new(vec![d], ggamma)?);
                    }
                    if want(*beta) {
                        accumulate(&mut grads[beta.0], Tensor::new(vec![d], gbeta)?);
                    }
                    if want(*x) {
                        accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), gx)?);
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let gx = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &v)| gv * gelu_grad_scalar(v))
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), gx)?);
                }
                Op::Dropout(x, mask) => {
                    accumulate(&mut grads[x.0], mul(&g, mask)?);
                }
                Op::Reshape(x) => {
                    accumulate(&mut grads[x.0], g.reshape(self.value(*x).shape())?);
                }
                Op::Permute(x, perm) => {
                    let mut inverse = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inverse[p] = i;
                    }
                    accumulate(&mut grads[x.0], permute(&g, &inverse)?);
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let each = g.item() / T::from_usize_lossy(xv.len());
                    accumulate(&mut grads[x.0], Tensor::full(xv.shape(), each));
                }
                Op::PrependToken(x, token) => {
                    let s = node.value.shape();
                    let (t, d) = (s[1], s[2]);
                    let mut gx = Vec::with_capacity(g.len() - s[0] * d);
                    let mut gt = vec![T::zero(); d];
                    for seq in g.data().chunks(t * d) {
                        for (a, &b) in gt.iter_mut().zip(&seq[..d]) {
                            *a += b;
                        }
                        gx.extend_from_slice(&seq[d..]);
                    }
                    if want(*token) {
                        accumulate(&mut grads[token.0], Tensor::new(vec![d], gt)?);
                    }
                    if want(*x) {
                        accumulate(&mut grads[x.0], Tensor::new(self.value(*x).shape().to_vec(), gx)?);
                    }
                }
                Op::SelectToken(x, index) => {
                    let xs = self.value(*x).shape();
                    let (t, d) = (xs[1], xs[2]);
                    let mut gx = vec![T::zero(); self.value(*x).len()];
                    for (b, row) in g.data().chunks(d).enumerate() {
                        let base = b * t * d + index * d;
                        gx[base..base + d].copy_from_slice(row);
                    }
                    accumulate(&mut grads[x.0], Tensor::new(xs.to_vec(), gx)?);
                }
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Param) && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::gradcheck::{finite_difference_grad, relative_error};
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, "graph-test", 0);
        Tensor::from_fn(shape, |_| r.random_range(-1.5..1.5))
    }

    #[test]
    fn sum_and_quadratic() {
        let x = random(&[3, 4], 1);
        let mut g = Graph::new();
        let xi = g.param(x.clone());
        let m = g.mean(xi);
        let loss = g.scale(m, 12.0);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(xi).unwrap().data().iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let mut g = Graph::new();
        let xi = g.param(x.clone());
        let sq = g.mul(xi, xi).unwrap();
        let m = g.mean(sq);
        let loss = g.scale(m, 6.0);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(xi).unwrap().max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::<f64>::ones(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::<f64>::ones(&[2]));
        let unused = g.param(Tensor::<f64>::ones(&[3, 3]));
        let loss = g.mean(x);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros(&[3, 3]));
    }

    /// Checks d(mean(w * f(x)))/dx against finite differences, where `w` is
    /// a fixed random weighting so that no gradient is trivially uniform.
    fn check_unary(
        shape: &[usize],
        seed: u64,
        build: impl Fn(&mut Graph<f64>, NodeId) -> NodeId,
    ) {
        let x = random(shape, seed);
        let loss_of = |g: &mut Graph<f64>, xi: NodeId| {
            let y = build(g, xi);
            let w = g.input(random(g.value(y).shape(), seed + 1000));
            let p = g.mul(y, w).unwrap();
            g.mean(p)
        };
        let mut g = Graph::new();
        let xi = g.param(x.clone());
        let loss = loss_of(&mut g, xi);
        let analytic = g.backward(loss).unwrap().take(xi).unwrap();
        let numeric = finite_difference_grad(
            |v: &Tensor<f64>| {
                let mut g = Graph::new();
                let xi = g.param(v.clone());
                let l = loss_of(&mut g, xi);
                g.value(l).item()
            },
            &x,
            1e-5,
        );
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn primitives_match_finite_differences() {
        for seed in 0..100u64 {
            let w = random(&[4, 3], seed + 500);
            check_unary(&[2, 5, 4], seed, |g, x| {
                let wi = g.param(w.clone());
                g.matmul(x, wi).unwrap()
            });
            let bmat = random(&[2, 4, 3], seed + 600);
            check_unary(&[2, 5, 4], seed, |g, x| {
                let b = g.input(bmat.clone());
                g.matmul(x, b).unwrap()
            });
            check_unary(&[2, 4, 3], seed, |g, x| {
                let a = g.input(random(&[2, 5, 4], seed + 700));
                g.matmul(a, x).unwrap()
            });
            check_unary(&[4, 3], seed, |g, x| {
                let a = g.input(random(&[2, 5, 4], seed + 800));
                g.matmul(a, x).unwrap()
            });
            check_unary(&[3, 4], seed, |g, x| {
                let b = g.input(random(&[4], seed + 1));
                g.add(x, b).unwrap()
            });
            check_unary(&[4], seed, |g, b| {
                let x = g.input(random(&[3, 4], seed + 2));
                g.add(x, b).unwrap()
            });
            check_unary(&[3, 4], seed, |g, x| g.mul(x, x).unwrap());
            check_unary(&[4], seed, |g, b| {
                let x = g.input(random(&[3, 4], seed + 3));
                g.mul(x, b).unwrap()
            });
            check_unary(&[3, 4], seed, |g, x| g.scale(x, -2.5));
            check_unary(&[3, 5], seed, |g, x| g.softmax(x, 1).unwrap());
            check_unary(&[3, 5], seed, |g, x| g.softmax(x, 0).unwrap());
            check_unary(&[3, 5], seed, |g, x| g.log_softmax(x).unwrap());
            check_unary(&[3, 6], seed, |g, x| {
                let gm = g.input(random(&[6], seed + 4));
                let bt = g.input(random(&[6], seed + 5));
                g.layer_norm(x, gm, bt, 1e-6).unwrap()
            });
            check_unary(&[6], seed, |g, gm| {
                let x = g.input(random(&[3, 6], seed + 6));
                let bt = g.input(random(&[6], seed + 7));
                g.layer_norm(x, gm, bt, 1e-6).unwrap()
            });
            check_unary(&[6], seed, |g, bt| {
                let x = g.input(random(&[3, 6], seed + 8));
                let gm = g.input(random(&[6], seed + 9));
                g.layer_norm(x, gm, bt, 1e-6).unwrap()
            });
            check_unary(&[3, 4], seed, |g, x| g.gelu(x));
            check_unary(&[3, 4], seed, |g, x| {
                let mask = random(&[3, 4], seed + 10).map(|v| if v > 0.0 { 2.0 } else { 0.0 });
                g.dropout(x, mask).unwrap()
            });
            check_unary(&[2, 6], seed, |g, x| g.reshape(x, &[3, 4]).unwrap());
            check_unary(&[2, 3, 4], seed, |g, x| g.permute(x, &[1, 2, 0]).unwrap());
            check_unary(&[2, 3, 4], seed, |g, x| {
                let t = g.input(random(&[4], seed + 11));
                g.prepend_token(x, t).unwrap()
            });
            check_unary(&[4], seed, |g, t| {
                let x = g.input(random(&[2, 3, 4], seed + 12));
                g.prepend_token(x, t).unwrap()
            });
            check_unary(&[2, 3, 4], seed, |g, x| g.select_token(x, 1).unwrap());
        }
    }
}
