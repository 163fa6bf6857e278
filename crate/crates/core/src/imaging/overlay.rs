//! Jet colour ramp and heatmap blending.

use super::{resize_bilinear_real, round_u8, ImageU8};
use crate::error::{Error, Result};

/// Jet ramp control points `(position, [r, g, b])`, linear in between.
pub const JET_CONTROL_POINTS: [(f64, [f64; 3]); 6] = [
    (0.0, [0.0, 0.0, 0.5]),
    (0.125, [0.0, 0.0, 1.0]),
    (0.375, [0.0, 1.0, 1.0]),
    (0.625, [1.0, 1.0, 0.0]),
    (0.875, [1.0, 0.0, 0.0]),
    (1.0, [0.5, 0.0, 0.0]),
];

/// Real-valued map with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Dimension(format!(
                "heatmap {height}x{width} with {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("heatmap value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Bilinear (half-pixel-centre) resample.
    pub fn resized(&self, out_h: usize, out_w: usize) -> Heatmap {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let values = resize_bilinear_real(&self.values, self.height, self.width, out_h, out_w)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        Heatmap {
            height: out_h,
            width: out_w,
            values,
        }
    }
}

/// Jet colour of `v` (clamped to `[0, 1]`) with components in `[0, 1]`.
pub fn jet(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let pts = &JET_CONTROL_POINTS;
    let i = pts.iter().rposition(|p| p.0 <= v).unwrap_or(0).min(pts.len() - 2);
    let (p0, c0) = pts[i];
    let (p1, c1) = pts[i + 1];
    let t = (v - p0) / (p1 - p0);
    [0, 1, 2].map(|k| c0[k] + t * (c1[k] - c0[k]))
}

/// `(1 - alpha) * img + alpha * 255 * jet(map)`, rounded half up.
///
/// The map is resampled to the image size when needed and the output is
/// always RGB (gray inputs are replicated first).
pub fn overlay_heatmap(img: &ImageU8, map: &Heatmap, alpha: f64) -> Result<ImageU8> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("overlay alpha {alpha} outside [0, 1]")));
    }
    let rgb = img.to_rgb();
    let map = map.resized(img.height(), img.width());
    let pixels = rgb
        .pixels()
        .chunks(3)
        .zip(map.values())
        .flat_map(|(p, &v)| {
            let color = jet(v);
            [0, 1, 2].map(|k| round_u8((1.0 - alpha) * f64::from(p[k]) + alpha * 255.0 * color[k]))
        })
        .collect();
    ImageU8::new(img.height(), img.width(), 3, pixels)
}
