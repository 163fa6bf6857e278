use std::io::Write;

use crate::error::{Error, Result};
use crate::imaging::{overlay_heatmap, Heatmap, ImageU8};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vit::AttentionTrace;

/// Heatmap opacity used for rollout overlays.
pub const ROLLOUT_ALPHA: f64 = 0.45;

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutMap {
    /// Side of the square patch grid.
    pub grid_size: usize,
    /// Row-major patch relevance in `[0, 1]`.
    pub grid: Vec<f64>,
    /// CLS row of the rollout matrix before normalization, CLS entry first.
    pub cls_row: Vec<f64>,
    /// Full `(N + 1) x (N + 1)` rollout matrix, row-major.
    pub matrix: Vec<f64>,
}

/// Head-averaged attention plus identity, rows renormalized to sum to 1.
pub fn augmented_layer<T: Scalar>(layer: &Tensor<T>) -> Result<Vec<f64>> {
    let s = layer.shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::Dimension(format!("attention layer must be [H, T, T], got {s:?}")));
    }
    let (heads, t) = (s[0], s[1]);
    let mut a = vec![0.0; t * t];
    for h in 0..heads {
        for (dst, v) in a.iter_mut().zip(&layer.data()[h * t * t..(h + 1) * t * t]) {
            *dst += v.to_f64_lossy();
        }
    }
    for v in a.iter_mut() {
        *v /= heads as f64;
    }
    for i in 0..t {
        a[i * t + i] += 1.0;
        let row = &mut a[i * t..(i + 1) * t];
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(a)
}

fn matmul_square(a: &[f64], b: &[f64], t: usize) -> Vec<f64> {
    let mut out = vec![0.0; t * t];
    for i in 0..t {
        for k in 0..t {
            let aik = a[i * t + k];
            for j in 0..t {
                out[i * t + j] += aik * b[k * t + j];
            }
        }
    }
    out
}

/// Rollout `A_aug(L) ... A_aug(1)` reduced to a min-max normalized patch
/// grid from the CLS row. A flat grid normalizes to all zeros.
pub fn attention_rollout<T: Scalar>(trace: &AttentionTrace<T>) -> Result<RolloutMap> {
    let first = trace
        .layers
        .first()
        .ok_or_else(|| Error::Dimension("attention trace has no layers".into()))?;
    let shape = first.shape().to_vec();
    let mut rollout: Option<Vec<f64>> = None;
    for (l, layer) in trace.layers.iter().enumerate() {
        if layer.shape() != shape.as_slice() {
            return Err(Error::Dimension(format!(
                "layer {l} has shape {:?}, layer 0 has {shape:?}",
                layer.shape()
            )));
        }
        let a = augmented_layer(layer)?;
        rollout = Some(match rollout {
            None => a,
            Some(r) => matmul_square(&a, &r, shape[1]),
        });
    }
    let matrix = rollout.expect("at least one layer");
    let t = shape[1];
    let n = t - 1;
    let g = (n as f64).sqrt().round() as usize;
    if g * g != n || n == 0 {
        return Err(Error::Dimension(format!("{n} patch tokens do not form a square grid")));
    }
    let cls_row = matrix[..t].to_vec();
    let patches = &cls_row[1..];
    let lo = patches.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = patches.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid = if hi > lo {
        patches.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; n]
    };
    Ok(RolloutMap {
        grid_size: g,
        grid,
        cls_row,
        matrix,
    })
}

/// Upsamples the grid to the image size and blends it with the jet ramp.
pub fn render_rollout(img: &ImageU8, map: &RolloutMap, alpha: f64) -> Result<ImageU8> {
    let heat = Heatmap::new(map.grid_size, map.grid_size, map.grid.clone())?;
    overlay_heatmap(img, &heat.resized(img.height(), img.width()), alpha)
}

/// One CSV row per grid row, no header.
pub fn write_grid_csv<W: Write>(map: &RolloutMap, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let fail = |e: csv::Error| Error::Format(format!("writing rollout grid: {e}"));
    for row in map.grid.chunks(map.grid_size) {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Format(format!("writing rollout grid: {e}")))
}
