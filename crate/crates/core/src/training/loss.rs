use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::{log_softmax, Tensor};

/// `(1 - eps) * targets + eps / K`, row by row.
pub fn smooth_targets<T: Scalar>(targets: &Tensor<T>, eps: f64) -> Tensor<T> {
    let k = targets.shape()[targets.ndim() - 1];
    let keep = T::from_f64_lossy(1.0 - eps);
    let spread = T::from_f64_lossy(eps / k as f64);
    targets.map(|t| keep * t + spread)
}

fn check_shapes<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>, eps: f64) -> Result<()> {
    if logits.ndim() != 2 || logits.shape() != targets.shape() {
        return Err(Error::Dimension(format!(
            "loss needs matching [B, K] logits and targets, got {:?} and {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Config(format!("label smoothing {eps} outside [0, 1)")));
    }
    Ok(())
}

/// Records the label-smoothed soft-target cross-entropy of `logits` on `g`:
/// the batch mean of `-sum_k t'_k log softmax(logits)_k`.
pub fn smoothed_soft_cross_entropy_graph<T: Scalar>(
    g: &mut Graph<T>,
    logits: NodeId,
    soft_targets: &Tensor<T>,
    eps: f64,
) -> Result<NodeId> {
    check_shapes(g.value(logits), soft_targets, eps)?;
    let k = soft_targets.shape()[1];
    let targets = g.input(smooth_targets(soft_targets, eps));
    let logp = g.log_softmax(logits)?;
    let weighted = g.mul(logp, targets)?;
    let mean = g.mean(weighted);
    Ok(g.scale(mean, -T::from_usize_lossy(k)))
}

/// Value-only form of [`smoothed_soft_cross_entropy_graph`].
pub fn smoothed_soft_cross_entropy<T: Scalar>(logits: &Tensor<T>, soft_targets: &Tensor<T>, eps: f64) -> Result<T> {
    check_shapes(logits, soft_targets, eps)?;
    let b = logits.shape()[0];
    let logp = log_softmax(logits)?;
    let targets = smooth_targets(soft_targets, eps);
    let total: T = logp.data().iter().zip(targets.data()).map(|(&l, &t)| l * t).sum();
    Ok(-total / T::from_usize_lossy(b))
}
