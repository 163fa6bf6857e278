//! Procedural four-class image set for smoke tests and demos.
//!
//! Each class has its own geometric pattern (checkerboard, horizontal stripes, disk,
//! diagonal stripes) with random placement, scale, brightness and noise.

use rand::Rng;

use crate::dataset::{ClassLabel, LabeledImage};
use crate::imaging::ImageU8;
use crate::rng::{self, RngStream};

fn pattern(label: ClassLabel, size: usize, r: &mut RngStream) -> ImageU8 {
    let s = size as f64;
    let cy = s / 2.0 + r.random_range(-0.08..0.08) * s;
    let cx = s / 2.0 + r.random_range(-0.08..0.08) * s;
    let fg = r.random_range(170.0..250.0);
    let bg = r.random_range(5.0..45.0);
    let cell = r.random_range(0.12..0.16) * s;
    let radius = r.random_range(0.3..0.38) * s;
    let width = r.random_range(0.07..0.09) * s;
    let noise: Vec<f64> = (0..size * size).map(|_| r.random_range(-12.0..12.0)).collect();
    ImageU8::from_fn(size, size, 3, |y, x, _| {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        let (dy, dx) = (py - cy, px - cx);
        let d = (dy * dy + dx * dx).sqrt();
        let on = match label {
            ClassLabel::Glioma => ((dy / cell).floor() as i64 + (dx / cell).floor() as i64).rem_euclid(2) == 0,
            ClassLabel::Healthy => dy.rem_euclid(3.0 * width) < 1.5 * width,
            ClassLabel::Meningioma => d < radius,
            ClassLabel::Pituitary => ((dy + dx) / std::f64::consts::SQRT_2).rem_euclid(3.0 * width) < 1.5 * width,
        };
        let v = if on { fg } else { bg } + noise[y * size + x];
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// `n` RGB images of `size x size`, classes cycling in label order.
pub fn synthetic_set(n: usize, size: usize, seed: u64) -> Vec<LabeledImage> {
    (0..n)
        .map(|i| {
            let label = ClassLabel::ALL[i % ClassLabel::ALL.len()];
            let mut r = rng::stream(seed, "synthetic", i as u64);
            LabeledImage { image: pattern(label, size, &mut r), label }
        })
        .collect()
}
