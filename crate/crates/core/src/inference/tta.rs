use crate::dataset::image_to_chw;
use crate::error::{Error, Result};
use crate::imaging::{adjust_contrast, hflip, resize_bilinear, rotate90, ImageU8, Rotation};
use crate::scalar::Scalar;
use crate::tensor::{softmax, Tensor};
use crate::vit::{forward, Mode, ViTConfig, ViTParams};

/// Contrast factor of the fifth view.
pub const TTA_CONTRAST: f64 = 1.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtaView {
    Original,
    HFlip,
    Rot90Cw,
    Rot90Ccw,
    Contrast,
}

impl TtaView {
    pub const ALL: [TtaView; 5] = [
        TtaView::Original,
        TtaView::HFlip,
        TtaView::Rot90Cw,
        TtaView::Rot90Ccw,
        TtaView::Contrast,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            TtaView::Original => "original",
            TtaView::HFlip => "hflip",
            TtaView::Rot90Cw => "rot90cw",
            TtaView::Rot90Ccw => "rot90ccw",
            TtaView::Contrast => "contrast",
        }
    }
}

/// The five views in [`TtaView::ALL`] order.
pub fn tta_views(img: &ImageU8) -> Result<[ImageU8; 5]> {
    if img.height() != img.width() {
        return Err(Error::Dimension(format!(
            "test-time views need a square image, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok([
        img.clone(),
        hflip(img),
        rotate90(img, Rotation::Clockwise),
        rotate90(img, Rotation::CounterClockwise),
        adjust_contrast(img, TTA_CONTRAST),
    ])
}

/// Converts to the model's channel count and size, then to `[1, C, H, W]`.
pub fn prepare_input<T: Scalar>(img: &ImageU8, cfg: &ViTConfig) -> Result<Tensor<T>> {
    let s = cfg.image_size;
    let img = img.with_channels(cfg.channels)?;
    let img = if img.height() == s && img.width() == s { img } else { resize_bilinear(&img, s, s) };
    Tensor::new(vec![1, cfg.channels, s, s], image_to_chw(&img))
}

/// Row-wise softmax of `[B, K]` logits, in `f64`.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    let p = softmax(&logits.cast::<f64>(), 1)?;
    Ok(p.data().chunks(p.shape()[1]).map(<[f64]>::to_vec).collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Single-view class probabilities.
pub fn predict<T: Scalar>(params: &ViTParams<T>, img: &ImageU8) -> Result<Vec<f64>> {
    let input = prepare_input::<T>(img, params.config())?;
    let (logits, _) = forward(params, &input, Mode::Eval, false, None)?;
    Ok(softmax_rows(&logits)?.remove(0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TtaResult {
    /// Per-view probabilities in [`TtaView::ALL`] order.
    pub views: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub predicted: usize,
}

/// Averages softmax probabilities over the five views. The image is first
/// brought to the model's size and channel count, so any input shape works.
pub fn tta_predict<T: Scalar>(params: &ViTParams<T>, img: &ImageU8) -> Result<TtaResult> {
    let cfg = params.config();
    let s = cfg.image_size;
    let base = img.with_channels(cfg.channels)?;
    let base = if base.height() == s && base.width() == s { base } else { resize_bilinear(&base, s, s) };
    let views = tta_views(&base)?;
    let mut data = Vec::with_capacity(5 * cfg.channels * s * s);
    for v in &views {
        data.extend(image_to_chw::<T>(v));
    }
    let batch = Tensor::new(vec![5, cfg.channels, s, s], data)?;
    let (logits, _) = forward(params, &batch, Mode::Eval, false, None)?;
    let probs = softmax_rows(&logits)?;
    let k = probs[0].len();
    // Offsets from the first view keep identical views exact.
    let mean: Vec<f64> = (0..k)
        .map(|c| probs[0][c] + probs.iter().map(|p| p[c] - probs[0][c]).sum::<f64>() / 5.0)
        .collect();
    Ok(TtaResult {
        predicted: argmax(&mean),
        views: probs,
        mean,
    })
}
