//! Training-time augmentation: per-image pixel transforms and per-batch
//! MixUp / CutMix with soft labels.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::dataset::Batch;
use crate::error::{Error, Result};
use crate::imaging::{adjust_contrast, hflip, rotate_small, translate, zoom, ImageU8};
use crate::rng::{self, RngStream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    /// Rotation drawn from `U(-rot_degrees, rot_degrees)`.
    pub rot_degrees: f64,
    pub translate_frac: f64,
    /// Zoom drawn from `U(1 - zoom_frac, 1 + zoom_frac)`.
    pub zoom_frac: f64,
    /// Contrast factor drawn from `U(1 - contrast_frac, 1 + contrast_frac)`.
    pub contrast_frac: f64,
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    /// Relative weights of (MixUp, CutMix).
    pub strategy_probs: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            rot_degrees: 15.0,
            translate_frac: 0.05,
            zoom_frac: 0.08,
            contrast_frac: 0.10,
            mixup_alpha: 0.2,
            cutmix_alpha: 1.0,
            strategy_probs: (0.5, 0.5),
        }
    }
}

impl AugmentConfig {
    /// No pixel transforms; sample mixing untouched.
    pub fn without_pixel_transforms(self) -> Self {
        Self {
            hflip_prob: 0.0,
            rot_degrees: 0.0,
            translate_frac: 0.0,
            zoom_frac: 0.0,
            contrast_frac: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (pm, pc) = self.strategy_probs;
        let probs_ok = [self.hflip_prob, pm, pc].iter().all(|p| (0.0..=1.0).contains(p)) && pm + pc > 0.0;
        let fracs_ok = [self.rot_degrees, self.translate_frac, self.zoom_frac, self.contrast_frac]
            .iter()
            .all(|f| *f >= 0.0 && f.is_finite());
        if !probs_ok {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !fracs_ok || self.rot_degrees > 45.0 || self.zoom_frac >= 1.0 || self.contrast_frac >= 1.0 {
            return Err(Error::Config("augmentation ranges out of bounds".into()));
        }
        if !(self.mixup_alpha > 0.0 && self.cutmix_alpha > 0.0) {
            return Err(Error::Config("MixUp/CutMix alphas must be positive".into()));
        }
        Ok(())
    }
}

/// Sampled parameters of one pixel augmentation, kept for replay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelAugmentParams {
    pub hflip: bool,
    pub degrees: f64,
    pub dx_frac: f64,
    pub dy_frac: f64,
    pub zoom: f64,
    pub contrast: f64,
}

impl PixelAugmentParams {
    pub const IDENTITY: Self = Self {
        hflip: false,
        degrees: 0.0,
        dx_frac: 0.0,
        dy_frac: 0.0,
        zoom: 1.0,
        contrast: 1.0,
    };
}

/// Draws six uniforms in a fixed order regardless of the configured ranges.
pub fn sample_pixel_params(cfg: &AugmentConfig, rng: &mut RngStream) -> PixelAugmentParams {
    let flip_u = rng::uniform(rng, 0.0, 1.0);
    PixelAugmentParams {
        hflip: flip_u < cfg.hflip_prob,
        degrees: rng::uniform(rng, -cfg.rot_degrees, cfg.rot_degrees),
        dx_frac: rng::uniform(rng, -cfg.translate_frac, cfg.translate_frac),
        dy_frac: rng::uniform(rng, -cfg.translate_frac, cfg.translate_frac),
        zoom: rng::uniform(rng, 1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac),
        contrast: rng::uniform(rng, 1.0 - cfg.contrast_frac, 1.0 + cfg.contrast_frac),
    }
}

/// Flip, rotate, translate, zoom, contrast, in that order.
pub fn apply_pixel_params(img: &ImageU8, p: &PixelAugmentParams) -> ImageU8 {
    let mut out = if p.hflip { hflip(img) } else { img.clone() };
    out = rotate_small(&out, p.degrees);
    out = translate(&out, p.dx_frac, p.dy_frac);
    out = zoom(&out, p.zoom);
    if p.contrast != 1.0 {
        out = adjust_contrast(&out, p.contrast);
    }
    out
}

pub fn pixel_augment(img: &ImageU8, cfg: &AugmentConfig, rng: &mut RngStream) -> (ImageU8, PixelAugmentParams) {
    let params = sample_pixel_params(cfg, rng);
    (apply_pixel_params(img, &params), params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixStrategy {
    MixUp,
    CutMix,
    None,
}

/// Pasted region `[y0, y1) x [x0, x1)`, already clipped to the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CutBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch<T> {
    pub images: Tensor<T>,
    pub soft_labels: Tensor<T>,
    /// Effective label weight of each sample's own label.
    pub lambda: f64,
    pub strategy: MixStrategy,
    pub partners: Vec<usize>,
    pub cut_box: Option<CutBox>,
}

impl<T: Scalar> MixedBatch<T> {
    fn unchanged(batch: &Batch<T>) -> Self {
        Self {
            images: batch.images.clone(),
            soft_labels: batch.labels.clone(),
            lambda: 1.0,
            strategy: MixStrategy::None,
            partners: (0..batch.len()).collect(),
            cut_box: None,
        }
    }
}

pub fn sample_strategy(probs: (f64, f64), rng: &mut RngStream) -> MixStrategy {
    let u = rng::uniform(rng, 0.0, 1.0);
    if u < probs.0 / (probs.0 + probs.1) {
        MixStrategy::MixUp
    } else {
        MixStrategy::CutMix
    }
}

fn beta_sample(alpha: f64, rng: &mut RngStream) -> Result<f64> {
    let dist = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("Beta({alpha}, {alpha}): {e}")))?;
    Ok(dist.sample(rng).clamp(0.0, 1.0))
}

fn mix_labels<T: Scalar>(labels: &Tensor<T>, partners: &[usize], lambda: f64) -> Tensor<T> {
    let k = labels.shape()[1];
    let (l, r) = (T::from_f64_lossy(lambda), T::from_f64_lossy(1.0 - lambda));
    let src = labels.data();
    let data = (0..src.len())
        .map(|i| {
            let (b, c) = (i / k, i % k);
            l * src[i] + r * src[partners[b] * k + c]
        })
        .collect();
    Tensor::new(labels.shape().to_vec(), data).expect("same shape")
}

pub fn mixup<T: Scalar>(batch: &Batch<T>, alpha: f64, rng: &mut RngStream) -> Result<MixedBatch<T>> {
    if batch.len() < 2 {
        return Ok(MixedBatch::unchanged(batch));
    }
    let lambda = beta_sample(alpha, rng)?;
    let partners = rng::permutation(batch.len(), rng);
    Ok(mixup_with(batch, lambda, &partners))
}

/// MixUp with explicit `lambda` and partner indices.
pub fn mixup_with<T: Scalar>(batch: &Batch<T>, lambda: f64, partners: &[usize]) -> MixedBatch<T> {
    let per = batch.images.len() / batch.len();
    let (l, r) = (T::from_f64_lossy(lambda), T::from_f64_lossy(1.0 - lambda));
    let src = batch.images.data();
    let data = (0..src.len())
        .map(|i| {
            let a = src[i];
            let b = src[partners[i / per] * per + i % per];
            (l * a + r * b).max(a.min(b)).min(a.max(b))
        })
        .collect();
    MixedBatch {
        images: Tensor::new(batch.images.shape().to_vec(), data).expect("same shape"),
        soft_labels: mix_labels(&batch.labels, partners, lambda),
        lambda,
        strategy: MixStrategy::MixUp,
        partners: partners.to_vec(),
        cut_box: None,
    }
}

pub fn cutmix<T: Scalar>(batch: &Batch<T>, alpha: f64, rng: &mut RngStream) -> Result<MixedBatch<T>> {
    if batch.len() < 2 {
        return Ok(MixedBatch::unchanged(batch));
    }
    let lambda = beta_sample(alpha, rng)?;
    let partners = rng::permutation(batch.len(), rng);
    let s = batch.images.shape();
    let (h, w) = (s[2], s[3]);
    let cx = rng.random_range(0..w as u64) as usize;
    let cy = rng.random_range(0..h as u64) as usize;
    Ok(cutmix_with(batch, lambda, &partners, (cy, cx)))
}

/// Box of side `dim * sqrt(1 - lambda)` centred at `center`, clipped.
pub fn cut_box(h: usize, w: usize, lambda: f64, center: (usize, usize)) -> CutBox {
    let ratio = (1.0 - lambda).max(0.0).sqrt();
    let span = |dim: usize, c: usize| {
        let len = (dim as f64 * ratio).floor() as i64;
        let lo = c as i64 - len / 2;
        let hi = lo + len;
        (lo.clamp(0, dim as i64) as usize, hi.clamp(0, dim as i64) as usize)
    };
    let (y0, y1) = span(h, center.0);
    let (x0, x1) = span(w, center.1);
    CutBox { y0, y1, x0, x1 }
}

/// CutMix with explicit `lambda`, partners and box centre `(y, x)`.
pub fn cutmix_with<T: Scalar>(batch: &Batch<T>, lambda: f64, partners: &[usize], center: (usize, usize)) -> MixedBatch<T> {
    let s = batch.images.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let bx = cut_box(h, w, lambda, center);
    let src = batch.images.data();
    let mut data = src.to_vec();
    let per = c * h * w;
    for (b, &j) in partners.iter().enumerate() {
        for ch in 0..c {
            for y in bx.y0..bx.y1 {
                let row = ch * h * w + y * w;
                let (dst, from) = (b * per + row, j * per + row);
                data[dst + bx.x0..dst + bx.x1].copy_from_slice(&src[from + bx.x0..from + bx.x1]);
            }
        }
    }
    let adjusted = 1.0 - bx.area() as f64 / (h * w) as f64;
    MixedBatch {
        images: Tensor::new(s.to_vec(), data).expect("same shape"),
        soft_labels: mix_labels(&batch.labels, partners, adjusted),
        lambda: adjusted,
        strategy: MixStrategy::CutMix,
        partners: partners.to_vec(),
        cut_box: Some(bx),
    }
}

/// One strategy per batch, then that strategy's mixing.
pub fn mix_batch<T: Scalar>(batch: &Batch<T>, cfg: &AugmentConfig, rng: &mut RngStream) -> Result<MixedBatch<T>> {
    match sample_strategy(cfg.strategy_probs, rng) {
        MixStrategy::MixUp => mixup(batch, cfg.mixup_alpha, rng),
        _ => cutmix(batch, cfg.cutmix_alpha, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassLabel;

    fn batch(n: usize, size: usize) -> Batch<f64> {
        let images: Vec<ImageU8> = (0..n)
            .map(|i| ImageU8::from_fn(size, size, 3, |y, x, c| ((i * 50 + y * 3 + x + c) % 256) as u8))
            .collect();
        let labels: Vec<ClassLabel> = (0..n).map(|i| ClassLabel::ALL[i % 4]).collect();
        Batch::from_images(&images, &labels).unwrap()
    }

    #[test]
    fn zero_ranges_are_identity() {
        let cfg = AugmentConfig::default().without_pixel_transforms();
        let img = ImageU8::from_fn(20, 20, 3, |y, x, c| (y * 9 + x * 4 + c) as u8);
        let mut r = rng::stream(1, "aug", 0);
        let (out, p) = pixel_augment(&img, &cfg, &mut r);
        assert_eq!(p, PixelAugmentParams::IDENTITY);
        assert_eq!(out, img);
    }

    #[test]
    fn pixel_augment_replays_through_imaging_ops() {
        let cfg = AugmentConfig::default();
        let img = ImageU8::from_fn(32, 32, 1, |y, x, _| ((x * x + y * 5) % 256) as u8);
        for seed in 0..20 {
            let (a, p) = pixel_augment(&img, &cfg, &mut rng::stream(seed, "aug", 0));
            let (b, _) = pixel_augment(&img, &cfg, &mut rng::stream(seed, "aug", 0));
            assert_eq!(a, b);
            assert!(p.degrees.abs() <= 15.0 && p.dx_frac.abs() <= 0.05 && (p.zoom - 1.0).abs() <= 0.08);
            let mut replay = if p.hflip { hflip(&img) } else { img.clone() };
            replay = rotate_small(&replay, p.degrees);
            replay = translate(&replay, p.dx_frac, p.dy_frac);
            replay = zoom(&replay, p.zoom);
            replay = adjust_contrast(&replay, p.contrast);
            assert_eq!(a, replay);
        }
    }

    #[test]
    fn strategy_extremes_and_balance() {
        let mut r = rng::stream(2, "strategy", 0);
        assert!((0..100).all(|_| sample_strategy((1.0, 0.0), &mut r) == MixStrategy::MixUp));
        assert!((0..100).all(|_| sample_strategy((0.0, 1.0), &mut r) == MixStrategy::CutMix));
        let mixups = (0..10_000)
            .filter(|_| sample_strategy((0.5, 0.5), &mut r) == MixStrategy::MixUp)
            .count();
        assert!((4800..=5200).contains(&mixups), "{mixups}");
    }

    #[test]
    fn mixup_endpoints() {
        let b = batch(4, 8);
        let perm = vec![1, 2, 3, 0];
        let same = mixup_with(&b, 1.0, &perm);
        assert_eq!(same.images, b.images);
        assert_eq!(same.soft_labels, b.labels);

        let two = batch(2, 4);
        let labels = crate::dataset::one_hot(&[ClassLabel::Glioma, ClassLabel::Meningioma]);
        let two = Batch { labels, ..two };
        let half = mixup_with(&two, 0.5, &[1, 0]);
        assert_eq!(&half.soft_labels.data()[..4], &[0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn beta_mean_is_one_half() {
        let mut r = rng::stream(3, "beta", 0);
        let n = 100_000;
        let mean = (0..n).map(|_| beta_sample(0.2, &mut r).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn cutmix_box_geometry() {
        assert_eq!(cut_box(224, 224, 1.0, (100, 50)).area(), 0);
        let b = cut_box(224, 224, 0.75, (112, 112));
        assert_eq!((b.y1 - b.y0, b.x1 - b.x0), (112, 112));
        let clipped = cut_box(224, 224, 0.75, (0, 223));
        assert_eq!((clipped.y0, clipped.y1, clipped.x0, clipped.x1), (0, 56, 167, 224));

        let bt = batch(3, 16);
        let m = cutmix_with(&bt, 1.0, &[2, 0, 1], (4, 4));
        assert_eq!(m.images, bt.images);
        assert_eq!(m.lambda, 1.0);
        let unclipped = cutmix_with(&bt, 0.75, &[2, 0, 1], (8, 8));
        assert_eq!(unclipped.lambda, 0.75);
    }

    #[test]
    fn small_batches_pass_through() {
        let b = batch(1, 4);
        let mut r = rng::stream(4, "mix", 0);
        assert_eq!(mixup(&b, 0.2, &mut r).unwrap().strategy, MixStrategy::None);
        assert_eq!(cutmix(&b, 1.0, &mut r).unwrap().images, b.images);
    }

    #[test]
    fn random_mixes_keep_invariants() {
        let b = batch(6, 12);
        let cfg = AugmentConfig::default();
        let per = 3 * 12 * 12;
        for seed in 0..200 {
            let mut r = rng::stream(seed, "mix", 0);
            let m = mix_batch(&b, &cfg, &mut r).unwrap();
            for row in m.soft_labels.data().chunks(4) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            match m.strategy {
                MixStrategy::MixUp => {
                    for (i, &v) in m.images.data().iter().enumerate() {
                        let a = b.images.data()[i];
                        let o = b.images.data()[m.partners[i / per] * per + i % per];
                        assert!(v >= a.min(o) && v <= a.max(o));
                    }
                }
                MixStrategy::CutMix => {
                    let pasted = m.cut_box.unwrap().area();
                    assert_eq!(m.lambda, 1.0 - pasted as f64 / 144.0);
                }
                MixStrategy::None => unreachable!(),
            }
        }
    }
}
