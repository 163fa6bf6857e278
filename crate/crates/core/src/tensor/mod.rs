//! Dense row-major tensors and the forward kernels used by the model.
//!
//! [`graph`] records these kernels for reverse-mode differentiation and
//! [`gradcheck`] provides the central-difference oracle used to verify it.

pub mod gradcheck;
pub mod graph;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Work (multiply-adds) above which matmul rows are spread over threads.
const PAR_MATMUL_WORK: usize = 1 << 18;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("zero-sized axis in shape {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(!shape.contains(&0), "zero-sized axis in shape {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a 0-d (or single element) tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn at(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} of size {dim}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| cast(v)).collect(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize_lossy(self.len())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn l2_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

/// Batched matrix product of `[.., m, k]` by `[.., k, n]`.
///
/// `b` may be 2-D, in which case it is shared by every batch entry of `a`.
/// Otherwise the leading dimensions must agree exactly.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() < 2 || b.ndim() < 2 {
        return Err(Error::Dimension(format!(
            "matmul needs rank >= 2, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (ar, br) = (a.ndim(), b.ndim());
    let (m, k) = (a.shape[ar - 2], a.shape[ar - 1]);
    let (k2, n) = (b.shape[br - 2], b.shape[br - 1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let batch_a = &a.shape[..ar - 2];
    let shared_b = br == 2;
    if !shared_b && batch_a != &b.shape[..br - 2] {
        return Err(Error::Dimension(format!(
            "matmul batch dimensions differ: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let batches = numel(batch_a);
    let mut out_shape = batch_a.to_vec();
    out_shape.extend([m, n]);
    let mut out = vec![T::zero(); batches * m * n];

    let row = |r: usize, dst: &mut [T]| {
        let bi = r / m;
        let a_row = &a.data[r * k..(r + 1) * k];
        let b_mat = if shared_b {
            &b.data[..]
        } else {
            &b.data[bi * k * n..(bi + 1) * k * n]
        };
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b_mat[p * n..(p + 1) * n];
            for (o, &bv) in dst.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    };
    if batches * m * n * k >= PAR_MATMUL_WORK {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(r, dst)| row(r, dst));
    } else {
        out.chunks_mut(n).enumerate().for_each(|(r, dst)| row(r, dst));
    }
    Tensor::new(out_shape, out)
}

/// Reorders axes; `perm[i]` names the input axis that becomes output axis `i`.
pub fn permute<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let nd = x.ndim();
    let mut seen = vec![false; nd];
    if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::Dimension(format!(
            "invalid permutation {perm:?} for shape {:?}",
            x.shape
        )));
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape[p]).collect();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * x.shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; nd];
    for _ in 0..x.len() {
        let src: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(x.data[src]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

/// Swaps the last two axes.
pub fn transpose_last<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let nd = x.ndim();
    if nd < 2 {
        return Err(Error::Dimension("transpose needs rank >= 2".into()));
    }
    let mut perm: Vec<usize> = (0..nd).collect();
    perm.swap(nd - 2, nd - 1);
    permute(x, &perm)
}

fn suffix_broadcast_check(a: &[usize], b: &[usize], op: &str) -> Result<()> {
    if b.len() > a.len() || a[a.len() - b.len()..] != *b {
        return Err(Error::Dimension(format!(
            "{op}: shape {b:?} does not broadcast onto {a:?}"
        )));
    }
    Ok(())
}

/// Elementwise `a + b`, with `b` broadcast along `a`'s leading axes.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    suffix_broadcast_check(&a.shape, &b.shape, "add")?;
    let period = b.len();
    let data = a
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| v + b.data[i % period])
        .collect();
    Tensor::new(a.shape.clone(), data)
}

/// Elementwise `a * b`, with `b` broadcast along `a`'s leading axes.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    suffix_broadcast_check(&a.shape, &b.shape, "mul")?;
    let period = b.len();
    let data = a
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| v * b.data[i % period])
        .collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, s: T) -> Tensor<T> {
    x.map(|v| v * s)
}

/// `exp(x - max) / sum(exp(x - max))` along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis(&x.shape, axis)?;
    let (outer, dim, inner) = axis_extents(&x.shape, axis);
    let mut out = x.data.clone();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * dim * inner + j * inner + i;
            let max = (0..dim).fold(T::neg_infinity(), |m, j| m.max(x.data[at(j)]));
            let mut total = T::zero();
            for j in 0..dim {
                let e = (x.data[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..dim {
                out[at(j)] /= total;
            }
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Log-softmax along the last axis.
pub fn log_softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let dim = *x
        .shape
        .last()
        .ok_or_else(|| Error::Dimension("log_softmax of a 0-d tensor".into()))?;
    let mut out = x.data.clone();
    for row in out.chunks_mut(dim) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Per-row statistics kept by [`layer_norm_with_stats`] for the backward pass.
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Normalizes over the last axis, then applies `gamma * x + beta`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    layer_norm_with_stats(x, gamma, beta, eps).map(|(y, _)| y)
}

pub fn layer_norm_with_stats<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormStats<T>)> {
    let d = *x
        .shape
        .last()
        .ok_or_else(|| Error::Dimension("layer_norm of a 0-d tensor".into()))?;
    if gamma.shape != [d] || beta.shape != [d] {
        return Err(Error::Dimension(format!(
            "layer_norm affine shapes {:?}/{:?} do not match last axis {d}",
            gamma.shape, beta.shape
        )));
    }
    if !(eps > T::zero()) {
        return Err(Error::Contract("layer_norm eps must be positive".into()));
    }
    let rows = x.len() / d;
    let dn = T::from_usize_lossy(d);
    let mut out = Vec::with_capacity(x.len());
    let mut stats = NormStats {
        mean: Vec::with_capacity(rows),
        rstd: Vec::with_capacity(rows),
    };
    for row in x.data.chunks(d) {
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rstd = T::one() / (var + eps).sqrt();
        for (j, &v) in row.iter().enumerate() {
            out.push((v - mean) * rstd * gamma.data[j] + beta.data[j]);
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    Ok((Tensor::new(x.shape.clone(), out)?, stats))
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

#[inline]
pub(crate) fn gelu_scalar<T: Scalar>(v: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let inv_sqrt2 = T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
    half * v * (T::one() + (v * inv_sqrt2).erf())
}

/// d/dx of exact GELU: `Phi(x) + x * phi(x)`.
#[inline]
pub(crate) fn gelu_grad_scalar<T: Scalar>(v: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let inv_sqrt2 = T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = T::from_f64_lossy(0.398_942_280_401_432_7);
    let cdf = half * (T::one() + (v * inv_sqrt2).erf());
    let pdf = inv_sqrt_2pi * (-half * v * v).exp();
    cdf + v * pdf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity_and_projector() {
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&Tensor::eye(2), &m).unwrap(), m);
        let p = t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(matmul(&p, &b).unwrap().data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let mut r = rng::stream(3, "test", 0);
        let a: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
        let got = matmul(&t(&[3, 4], &a), &t(&[4, 2], &b)).unwrap();
        assert_eq!(got.data(), naive_matmul(&a, &b, 3, 4, 2).as_slice());
    }

    #[test]
    fn matmul_batched_and_shared() {
        let mut r = rng::stream(4, "test", 0);
        let a: Vec<f64> = (0..2 * 3 * 4).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..2 * 4 * 5).map(|_| r.random_range(-1.0..1.0)).collect();
        let got = matmul(&t(&[2, 3, 4], &a), &t(&[2, 4, 5], &b)).unwrap();
        assert_eq!(got.shape(), &[2, 3, 5]);
        assert_eq!(&got.data()[15..], naive_matmul(&a[12..], &b[20..], 3, 4, 5).as_slice());
        let shared = matmul(&t(&[2, 3, 4], &a), &t(&[4, 5], &b[..20])).unwrap();
        assert_eq!(&shared.data()[15..], naive_matmul(&a[12..], &b[..20], 3, 4, 5).as_slice());
        assert!(matmul(&t(&[3, 4], &a[..12]), &t(&[3, 4], &a[..12])).is_err());
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&t(&[4], &[1.0; 4]), 0).unwrap();
        assert!(u.data().iter().all(|&v| v == 0.25));
        let s = softmax(&t(&[2], &[0.0, -1e30]), 0).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12 && s.data()[1].abs() < 1e-12);
        let x = softmax(&t(&[3], &[1.0, 2.0, 3.0]), 0).unwrap();
        // exp(k - 3) / (1 + e^-1 + e^-2), evaluated by hand
        let z = 1.0 + (-1.0f64).exp() + (-2.0f64).exp();
        let want = [(-2.0f64).exp() / z, (-1.0f64).exp() / z, 1.0 / z];
        for (g, w) in x.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        assert!(softmax(&x, 1).is_err());
    }

    #[test]
    fn softmax_inner_axis() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 3.0, 2.0, 1.0]);
        let s = softmax(&x, 0).unwrap();
        for j in 0..3 {
            assert!((s.at(&[0, j]) + s.at(&[1, j]) - 1.0).abs() < 1e-12);
        }
        assert!((s.at(&[0, 0]) - s.at(&[1, 2])).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_cases() {
        let g = Tensor::ones(&[4]);
        let b = Tensor::zeros(&[4]);
        let c = layer_norm(&t(&[4], &[3.0; 4]), &g, &b, 1e-6).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        let g2 = Tensor::ones(&[2]);
        let b2 = Tensor::zeros(&[2]);
        let y = layer_norm(&t(&[2], &[1.0, -1.0]), &g2, &b2, 1e-6).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-5 && (y.data()[1] + 1.0).abs() < 1e-5);

        let mut r = rng::stream(5, "test", 0);
        let x: Vec<f64> = (0..32).map(|_| r.random_range(-3.0..5.0)).collect();
        let y = layer_norm(&t(&[32], &x), &Tensor::ones(&[32]), &Tensor::zeros(&[32]), 1e-6).unwrap();
        let mean = y.mean();
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }

    /// erf by its Maclaurin series, summed until terms vanish.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-20 {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn gelu_cases() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert!((gelu_scalar(12.0f64) - 12.0).abs() < 1e-12);
        let want = 0.5 * (1.0 + erf_series(std::f64::consts::FRAC_1_SQRT_2));
        assert!((gelu_scalar(1.0f64) - want).abs() < 1e-15);
        assert!((gelu_scalar(1.0f32) - want as f32).abs() < 1e-6);
    }

    #[test]
    fn permute_round_trip() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let p = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), x.at(&[1, 2, 3]));
        let back = permute(&p, &[1, 2, 0]).unwrap();
        assert_eq!(back, x);
        assert!(permute(&x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn broadcast_add_mul() {
        let x = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        let b = t(&[3], &[10.0, 20.0, 30.0]);
        assert_eq!(add(&x, &b).unwrap().data(), &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]);
        assert_eq!(mul(&x, &b).unwrap().data(), &[0.0, 20.0, 60.0, 30.0, 80.0, 150.0]);
        assert!(add(&x, &t(&[2], &[1.0, 1.0])).is_err());
    }

    proptest::proptest! {
        #[test]
        fn softmax_is_a_distribution(v in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let n = v.len();
            let s = softmax(&t(&[n], &v), 0).unwrap();
            proptest::prop_assert!(s.data().iter().all(|&p| p >= 0.0));
            proptest::prop_assert!((s.sum() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn matmul_right_identity_is_exact(v in proptest::collection::vec(-1000i32..1000, 12)) {
            let a = Tensor::new(vec![3, 4], v.iter().map(|&x| x as f64).collect()).unwrap();
            proptest::prop_assert_eq!(matmul(&a, &Tensor::eye(4)).unwrap(), a);
        }
    }
}
