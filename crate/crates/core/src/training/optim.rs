use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vit::ViTParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments for every parameter plus the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(params: &ViTParams<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One decoupled-decay step. Parameters whose gradient is `None` are
    /// left untouched along with their moments; `lr_of(i)` gives the rate
    /// of parameter `i`.
    pub fn step(
        &mut self,
        params: &mut ViTParams<T>,
        grads: &[Option<Tensor<T>>],
        lr_of: impl Fn(usize) -> f64,
        weight_decay: f64,
        hyper: &AdamWHyper,
    ) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "AdamW got {} gradients and {} moments for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let theta = params.tensor_at_mut(i);
            if g.shape() != theta.shape() {
                return Err(Error::Dimension(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape(),
                    theta.shape()
                )));
            }
            adamw_update(
                theta.data_mut(),
                g.data(),
                self.m[i].data_mut(),
                self.v[i].data_mut(),
                self.t,
                lr_of(i),
                weight_decay,
                hyper,
            );
        }
        Ok(())
    }
}

/// Elementwise AdamW at step `t` (1-based). Decay uses the pre-update value.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    weight_decay: f64,
    hyper: &AdamWHyper,
) {
    let c = T::from_f64_lossy;
    let (b1, b2) = (c(hyper.beta1), c(hyper.beta2));
    let (one_b1, one_b2) = (c(1.0 - hyper.beta1), c(1.0 - hyper.beta2));
    let bc1 = c(1.0 - hyper.beta1.powi(t as i32));
    let bc2 = c(1.0 - hyper.beta2.powi(t as i32));
    let (lr_t, decay, eps) = (c(lr), c(lr * weight_decay), c(hyper.eps));
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let old = theta[i];
        theta[i] = old - lr_t * m_hat / (v_hat.sqrt() + eps) - decay * old;
    }
}

/// `lr_min + (lr_max - lr_min)(1 + cos(pi t / T)) / 2`, exact at both ends.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 || t > total {
        return Err(Error::Config(format!("cosine step {t} outside 0..={total}")));
    }
    if t == 0 {
        return Ok(lr_max);
    }
    if t == total {
        return Ok(lr_min);
    }
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t as f64 / total as f64).cos()))
}

/// Exponential moving average of parameters.
#[derive(Clone, Debug)]
pub struct EmaState<T> {
    pub shadow: ViTParams<T>,
    pub decay: f64,
}

impl<T: Scalar> EmaState<T> {
    /// Starts as an exact copy.
    pub fn new(params: &ViTParams<T>, decay: f64) -> Self {
        Self {
            shadow: params.clone(),
            decay,
        }
    }

    /// `shadow <- decay * shadow + (1 - decay) * theta`, written as
    /// `shadow += (1 - decay)(theta - shadow)` so equal values stay fixed.
    pub fn update(&mut self, params: &ViTParams<T>) -> Result<()> {
        if params.len() != self.shadow.len() {
            return Err(Error::Contract("EMA shadow and parameters differ in layout".into()));
        }
        let rate = T::from_f64_lossy(1.0 - self.decay);
        for i in 0..params.len() {
            ema_update(self.shadow.tensor_at_mut(i).data_mut(), params.tensor_at(i).data(), rate);
        }
        Ok(())
    }
}

pub fn ema_update<T: Scalar>(shadow: &mut [T], theta: &[T], rate: T) {
    for (s, &p) in shadow.iter_mut().zip(theta) {
        *s += rate * (p - *s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::ToPrimitive;

    fn run(theta: f64, g: f64, t: u64, lr: f64, wd: f64) -> f64 {
        let mut th = [theta];
        let (mut m, mut v) = ([0.0], [0.0]);
        for step in 1..=t {
            adamw_update(&mut th, &[g], &mut m, &mut v, step, lr, wd, &AdamWHyper::default());
        }
        th[0]
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        assert_eq!(run(0.37, 0.0, 3, 1e-3, 0.0), 0.37);
    }

    #[test]
    fn first_step_closed_form() {
        let want = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8)) - 1e-3 * 1e-4;
        let got = run(1.0, 1.0, 1, 1e-3, 1e-4);
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        assert!((got - 0.9989999).abs() < 1e-9);
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let mut th = [1.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        for step in 1..=500 {
            let g = [th[0]];
            adamw_update(&mut th, &g, &mut m, &mut v, step, 1e-2, 0.0, &AdamWHyper::default());
        }
        assert!(th[0].abs() < 1e-3, "{}", th[0]);
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 10, 1e-5, 1e-7).unwrap(), 1e-5);
        assert_eq!(cosine_lr(10, 10, 1e-5, 1e-7).unwrap(), 1e-7);
        assert!((cosine_lr(5, 10, 1e-5, 1e-7).unwrap() - 5.05e-6).abs() < 1e-12);
        assert!(cosine_lr(11, 10, 1e-5, 1e-7).is_err());
        assert!(cosine_lr(0, 0, 1e-5, 1e-7).is_err());
        let lrs: Vec<f64> = (0..=10).map(|t| cosine_lr(t, 10, 1e-4, 1e-7).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ema_single_step_and_fixed_point() {
        let mut s = [1.0f64];
        ema_update(&mut s, &[2.0], 1.0 - 0.999);
        assert_eq!(s[0], 1.001);
        let mut s = [0.123f32];
        for _ in 0..100 {
            ema_update(&mut s, &[0.123], 1.0 - 0.999);
        }
        assert_eq!(s[0], 0.123);
    }

    /// The gap to a constant target follows `gap_k = 0.999^k gap_0`; the
    /// reference is the exact rational recurrence.
    #[test]
    fn ema_gap_shrinks_geometrically() {
        let rate = 1.0 - 0.999f64;
        let (target, start) = (0.75f64, -1.5f64);
        let mut s = [start];
        let r = |v: f64| BigRational::from_float(v).unwrap();
        let factor = BigRational::new(BigInt::from(999), BigInt::from(1000));
        let mut gap = r(start) - r(target);
        for _ in 0..2000 {
            ema_update(&mut s, &[target], rate);
            gap = gap * factor.clone();
            let want = gap.to_f64().unwrap();
            assert!(((s[0] - target) - want).abs() <= 1e-12, "{} vs {want}", s[0] - target);
        }
    }
}
