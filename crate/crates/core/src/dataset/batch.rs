use std::path::Path;

use rayon::prelude::*;

use super::{ClassLabel, SplitEntry, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::imaging::{load_image, resize_bilinear, ImageU8};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Images `[B, C, H, W]` scaled to `[0, 1]` with label rows `[B, K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub labels: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_images(images: &[ImageU8], labels: &[ClassLabel]) -> Result<Self> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::Contract(format!(
                "batch needs matching non-empty images/labels, got {}/{}",
                images.len(),
                labels.len()
            )));
        }
        let (c, h, w) = (images[0].channels(), images[0].height(), images[0].width());
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if (img.channels(), img.height(), img.width()) != (c, h, w) {
                return Err(Error::Dimension("batch images differ in size".into()));
            }
            data.extend(image_to_chw::<T>(img));
        }
        Ok(Self {
            images: Tensor::new(vec![images.len(), c, h, w], data)?,
            labels: one_hot(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Channel-major values in `[0, 1]`.
pub fn image_to_chw<T: Scalar>(img: &ImageU8) -> Vec<T> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let inv = T::from_f64_lossy(1.0 / 255.0);
    let mut out = Vec::with_capacity(h * w * c);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.push(T::from_f64_lossy(f64::from(img.get(y, x, ch))) * inv);
            }
        }
    }
    out
}

pub fn one_hot<T: Scalar>(labels: &[ClassLabel]) -> Tensor<T> {
    let mut data = vec![T::zero(); labels.len() * NUM_CLASSES];
    for (i, l) in labels.iter().enumerate() {
        data[i * NUM_CLASSES + l.index()] = T::one();
    }
    Tensor::new(vec![labels.len(), NUM_CLASSES], data).expect("non-empty label list")
}

/// Visiting order for one epoch, keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    rng::permutation(n, &mut rng::stream(seed, "epoch", epoch as u64))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    pub image: ImageU8,
    pub label: ClassLabel,
}

/// Loads and resizes every entry to `size x size` with `channels` channels.
/// Order matches `entries`; the first unreadable file aborts with its path.
pub fn load_split(entries: &[SplitEntry], root: impl AsRef<Path>, size: usize, channels: usize) -> Result<Vec<LabeledImage>> {
    let root = root.as_ref();
    entries
        .par_iter()
        .map(|e| {
            let img = load_image(root.join(&e.path))?.with_channels(channels)?;
            Ok(LabeledImage {
                image: resize_bilinear(&img, size, size),
                label: e.label,
            })
        })
        .collect()
}

/// Shuffled batches for one epoch; the last batch may be short.
pub fn make_batches<T: Scalar>(
    entries: &[SplitEntry],
    root: impl AsRef<Path>,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: usize,
    image_size: usize,
    channels: usize,
) -> Result<Vec<Batch<T>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let order = epoch_order(entries.len(), shuffle_seed, epoch);
    let ordered: Vec<SplitEntry> = order.iter().map(|&i| entries[i].clone()).collect();
    let loaded = load_split(&ordered, root, image_size, channels)?;
    loaded
        .chunks(batch_size)
        .map(|chunk| {
            let images: Vec<ImageU8> = chunk.iter().map(|l| l.image.clone()).collect();
            let labels: Vec<ClassLabel> = chunk.iter().map(|l| l.label).collect();
            Batch::from_images(&images, &labels)
        })
        .collect()
}
