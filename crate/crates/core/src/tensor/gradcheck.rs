//! Central-difference gradient oracle.

use super::Tensor;
use crate::scalar::Scalar;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element `i`.
pub fn finite_difference_grad<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    h: T,
) -> Tensor<T> {
    assert!(h > T::zero(), "finite difference step must be positive");
    let mut probe = x.clone();
    let two_h = h + h;
    let grad = (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - h;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / two_h
        })
        .collect();
    Tensor::new(x.shape().to_vec(), grad).expect("same shape as x")
}

/// `||a - b|| / max(||a||, ||b||)` in the L2 norm; 0 when both vanish.
pub fn relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a.l2_norm().to_f64_lossy().max(b.l2_norm().to_f64_lossy());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
