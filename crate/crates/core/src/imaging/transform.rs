//! Resampling and geometric transforms.
//!
//! Pixel `(x, y)` has its centre at `(x + 0.5, y + 0.5)`. Resizing uses the
//! half-pixel-centre convention with clamped borders; rotation, translation
//! and zoom sample bilinearly and treat everything outside the source as
//! black.

use super::{round_u8, ImageU8};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rotation {
    Clockwise,
    CounterClockwise,
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Half-pixel-centre source coordinate and clamped neighbours for one axis.
fn resize_axis(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let s = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear(img: &ImageU8, out_h: usize, out_w: usize) -> ImageU8 {
    assert!(out_h >= 1 && out_w >= 1, "output size must be positive");
    if out_h == img.height() && out_w == img.width() {
        return img.clone();
    }
    let ys = resize_axis(out_h, img.height());
    let xs = resize_axis(out_w, img.width());
    let ch = img.channels();
    let mut pixels = Vec::with_capacity(out_h * out_w * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let p = |y, x| f64::from(img.get(y, x, c));
                let top = lerp(p(y0, x0), p(y0, x1), fx);
                let bottom = lerp(p(y1, x0), p(y1, x1), fx);
                pixels.push(round_u8(lerp(top, bottom, fy)));
            }
        }
    }
    ImageU8::new(out_h, out_w, ch, pixels).expect("valid dimensions")
}

/// Real-valued bilinear resize of a single-channel row-major grid.
pub fn resize_bilinear_real(values: &[f64], height: usize, width: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(values.len(), height * width);
    assert!(out_h >= 1 && out_w >= 1, "output size must be positive");
    let ys = resize_axis(out_h, height);
    let xs = resize_axis(out_w, width);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |y: usize, x: usize| values[y * width + x];
            let top = lerp(p(y0, x0), p(y0, x1), fx);
            let bottom = lerp(p(y1, x0), p(y1, x1), fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    out
}

pub fn hflip(img: &ImageU8) -> ImageU8 {
    let w = img.width();
    ImageU8::from_fn(img.height(), w, img.channels(), |y, x, c| img.get(y, w - 1 - x, c))
}

/// Quarter turn; the output has swapped height and width.
pub fn rotate90(img: &ImageU8, direction: Rotation) -> ImageU8 {
    let (h, w) = (img.height(), img.width());
    match direction {
        Rotation::Clockwise => ImageU8::from_fn(w, h, img.channels(), |y, x, c| img.get(h - 1 - x, y, c)),
        Rotation::CounterClockwise => {
            ImageU8::from_fn(w, h, img.channels(), |y, x, c| img.get(x, w - 1 - y, c))
        }
    }
}

/// Bilinear sample at pixel-index coordinates with a black surround.
fn sample_black(img: &ImageU8, sx: f64, sy: f64, c: usize) -> f64 {
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = (sx - x0, sy - y0);
    let p = |y: f64, x: f64| -> f64 {
        if x < 0.0 || y < 0.0 || x >= img.width() as f64 || y >= img.height() as f64 {
            0.0
        } else {
            f64::from(img.get(y as usize, x as usize, c))
        }
    };
    let top = if fx == 0.0 { p(y0, x0) } else { lerp(p(y0, x0), p(y0, x0 + 1.0), fx) };
    if fy == 0.0 {
        return top;
    }
    let bottom = if fx == 0.0 {
        p(y0 + 1.0, x0)
    } else {
        lerp(p(y0 + 1.0, x0), p(y0 + 1.0, x0 + 1.0), fx)
    };
    lerp(top, bottom, fy)
}

/// Inverse-maps every output pixel through `src` and samples the input.
fn warp(img: &ImageU8, src: impl Fn(f64, f64) -> (f64, f64)) -> ImageU8 {
    let mut out = ImageU8::filled(img.height(), img.width(), img.channels(), 0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (sx, sy) = src(x as f64, y as f64);
            for c in 0..img.channels() {
                out.set(y, x, c, round_u8(sample_black(img, sx, sy, c)));
            }
        }
    }
    out
}

fn center(img: &ImageU8) -> (f64, f64) {
    ((img.width() as f64 - 1.0) / 2.0, (img.height() as f64 - 1.0) / 2.0)
}

/// Rotation about the image centre; positive angles turn clockwise as
/// displayed (rows grow downward). Augmentation keeps `|degrees| <= 45`.
pub fn rotate_small(img: &ImageU8, degrees: f64) -> ImageU8 {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = center(img);
    warp(img, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cos * dx + sin * dy + cx, -sin * dx + cos * dy + cy)
    })
}

/// Shifts content right by `dx_frac * width` and down by `dy_frac * height`.
pub fn translate(img: &ImageU8, dx_frac: f64, dy_frac: f64) -> ImageU8 {
    if dx_frac == 0.0 && dy_frac == 0.0 {
        return img.clone();
    }
    let dx = dx_frac * img.width() as f64;
    let dy = dy_frac * img.height() as f64;
    warp(img, |x, y| (x - dx, y - dy))
}

/// Scales content about the centre; `scale > 1` zooms in.
pub fn zoom(img: &ImageU8, scale: f64) -> ImageU8 {
    assert!(scale > 0.0, "zoom scale must be positive");
    if scale == 1.0 {
        return img.clone();
    }
    let (cx, cy) = center(img);
    warp(img, |x, y| ((x - cx) / scale + cx, (y - cy) / scale + cy))
}

/// `p -> mean + factor * (p - mean)` with the per-channel mean.
pub fn adjust_contrast(img: &ImageU8, factor: f64) -> ImageU8 {
    assert!(factor > 0.0, "contrast factor must be positive");
    let ch = img.channels();
    let n = (img.height() * img.width()) as f64;
    let means: Vec<f64> = (0..ch)
        .map(|c| img.pixels().iter().skip(c).step_by(ch).map(|&v| f64::from(v)).sum::<f64>() / n)
        .collect();
    let pixels = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = means[i % ch];
            round_u8(m + factor * (f64::from(v) - m))
        })
        .collect();
    ImageU8::new(img.height(), img.width(), ch, pixels).expect("valid dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_image(h: usize, w: usize, ch: usize, seed: u64) -> ImageU8 {
        let mut r = rng::stream(seed, "img", 0);
        ImageU8::from_fn(h, w, ch, |_, _, _| r.random())
    }

    fn sorted(img: &ImageU8) -> Vec<u8> {
        let mut v = img.pixels().to_vec();
        v.sort_unstable();
        v
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = random_image(7, 5, 3, 1);
        assert_eq!(resize_bilinear(&img, 7, 5), img);
        let c = ImageU8::filled(4, 6, 1, 123);
        let big = resize_bilinear(&c, 13, 3);
        assert!(big.pixels().iter().all(|&v| v == 123));
    }

    #[test]
    fn checkerboard_upsample_by_hand() {
        // [[0, 200], [200, 0]] -> 4x4; source coords per output index are
        // clamp(-0.25)=0, 0.25, 0.75, clamp(1.25)=1.
        let img = ImageU8::new(2, 2, 1, vec![0, 200, 200, 0]).unwrap();
        let out = resize_bilinear(&img, 4, 4);
        let value = |sy: f64, sx: f64| {
            let top = 0.0 + sx * 200.0;
            let bottom = 200.0 - sx * 200.0;
            top + sy * (bottom - top)
        };
        let s = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out.get(y, x, 0), round_u8(value(s[y], s[x])), "({y},{x})");
            }
        }
        assert_eq!(out.get(1, 1, 0), 75);
        assert_eq!(out.get(0, 1, 0), 50);
        let real = resize_bilinear_real(&[0.0, 1.0, 1.0, 0.0], 2, 2, 4, 4);
        assert!((real[5] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn flips_and_quarter_turns_are_exact() {
        let img = random_image(5, 8, 3, 2);
        assert_eq!(hflip(&hflip(&img)), img);
        let mut r = img.clone();
        for _ in 0..4 {
            r = rotate90(&r, Rotation::Clockwise);
        }
        assert_eq!(r, img);
        let cw = rotate90(&img, Rotation::Clockwise);
        assert_eq!((cw.height(), cw.width()), (8, 5));
        assert_eq!(rotate90(&cw, Rotation::CounterClockwise), img);
        assert_eq!(sorted(&cw), sorted(&img));
        assert_eq!(sorted(&hflip(&img)), sorted(&img));
    }

    #[test]
    fn clockwise_moves_left_column_to_top_row() {
        let img = ImageU8::new(2, 2, 1, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(rotate90(&img, Rotation::Clockwise).pixels(), &[3, 1, 4, 2]);
        assert_eq!(rotate90(&img, Rotation::CounterClockwise).pixels(), &[2, 4, 1, 3]);
    }

    #[test]
    fn small_rotation_agrees_with_quarter_turn_on_odd_square() {
        let img = random_image(9, 9, 1, 3);
        assert_eq!(rotate_small(&img, 90.0), rotate90(&img, Rotation::Clockwise));
        assert_eq!(rotate_small(&img, 0.0), img);
    }

    #[test]
    fn translate_shifts_and_fills_black() {
        let img = random_image(10, 10, 1, 4);
        let t = translate(&img, 0.2, 0.0);
        for y in 0..10 {
            assert_eq!(t.get(y, 0, 0), 0);
            assert_eq!(t.get(y, 1, 0), 0);
            for x in 2..10 {
                assert_eq!(t.get(y, x, 0), img.get(y, x - 2, 0));
            }
        }
    }

    #[test]
    fn zoom_identity_and_out() {
        let img = ImageU8::filled(11, 11, 1, 200);
        assert_eq!(zoom(&img, 1.0), img);
        let z = zoom(&img, 0.5);
        assert_eq!(z.get(5, 5, 0), 200);
        assert_eq!(z.get(0, 0, 0), 0);
    }

    #[test]
    fn contrast_identity_and_stretch() {
        let img = random_image(6, 6, 3, 5);
        assert_eq!(adjust_contrast(&img, 1.0), img);
        let two = ImageU8::new(1, 2, 1, vec![100, 200]).unwrap();
        assert_eq!(adjust_contrast(&two, 1.1).pixels(), &[95, 205]);
        let c = ImageU8::filled(3, 3, 3, 42);
        assert_eq!(adjust_contrast(&c, 1.1), c);
    }
}
