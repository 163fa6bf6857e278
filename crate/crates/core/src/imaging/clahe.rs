//! Contrast Limited Adaptive Histogram Equalization.
//!
//! The image is divided into a `tiles_y x tiles_x` grid. Each tile gets a
//! clipped, redistributed histogram and the CDF mapping derived from it;
//! every output pixel is the bilinear blend of the four nearest tile
//! mappings, with the grid clamped at the borders. Colour images are
//! equalized on the CIE L* channel only.

use super::{color, round_u8, ImageU8};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClaheConfig {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Multiple of the average bin height at which a bin is clipped.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        Self {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: 2.0,
            bins: 256,
        }
    }
}

impl ClaheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(Error::Config("CLAHE tile grid must be at least 1x1".into()));
        }
        if !(self.clip_limit > 0.0) {
            return Err(Error::Config("CLAHE clip limit must be positive".into()));
        }
        if self.bins == 0 || self.bins > 256 {
            return Err(Error::Config("CLAHE bins must be in 1..=256".into()));
        }
        Ok(())
    }
}

pub fn clahe(img: &ImageU8, cfg: &ClaheConfig) -> Result<ImageU8> {
    cfg.validate()?;
    if img.height() < cfg.tiles_y || img.width() < cfg.tiles_x {
        return Err(Error::ImageTooSmall {
            height: img.height(),
            width: img.width(),
            tiles_y: cfg.tiles_y,
            tiles_x: cfg.tiles_x,
        });
    }
    match img.channels() {
        1 => {
            let out = equalize_plane(img.pixels(), img.height(), img.width(), cfg);
            ImageU8::new(img.height(), img.width(), 1, out)
        }
        3 => {
            let mut lab = color::to_lab(img)?;
            let lum: Vec<u8> = lab.data.iter().map(|p| round_u8(p[0] * 255.0 / 100.0)).collect();
            let eq = equalize_plane(&lum, img.height(), img.width(), cfg);
            for (p, &v) in lab.data.iter_mut().zip(&eq) {
                p[0] = f64::from(v) * 100.0 / 255.0;
            }
            color::from_lab(&lab)
        }
        c => Err(Error::Channels(c)),
    }
}

/// Start offsets of `tiles` near-equal spans covering `0..len`, plus `len`.
fn tile_bounds(len: usize, tiles: usize) -> Vec<usize> {
    (0..=tiles).map(|i| i * len / tiles).collect()
}

/// Per-axis blend: for each coordinate, the two tile indices and the
/// weight of the second one.
fn blend_weights(len: usize, bounds: &[usize]) -> Vec<(usize, usize, f64)> {
    let centers: Vec<f64> = bounds
        .windows(2)
        .map(|w| (w[0] + w[1]) as f64 / 2.0)
        .collect();
    let last = centers.len() - 1;
    (0..len)
        .map(|p| {
            let pc = p as f64 + 0.5;
            if pc <= centers[0] {
                (0, 0, 0.0)
            } else if pc >= centers[last] {
                (last, last, 0.0)
            } else {
                let i = centers.partition_point(|&c| c <= pc) - 1;
                let w = (pc - centers[i]) / (centers[i + 1] - centers[i]);
                (i, i + 1, w)
            }
        })
        .collect()
}

/// CDF mapping for one tile, indexed by bin, in `[0, 255]` (unrounded).
fn tile_mapping(plane: &[u8], width: usize, ys: (usize, usize), xs: (usize, usize), cfg: &ClaheConfig) -> Vec<f64> {
    let bins = cfg.bins;
    let mut hist = vec![0f64; bins];
    for y in ys.0..ys.1 {
        for &v in &plane[y * width + xs.0..y * width + xs.1] {
            hist[usize::from(v) * bins / 256] += 1.0;
        }
    }
    let total = ((ys.1 - ys.0) * (xs.1 - xs.0)) as f64;
    let threshold = cfg.clip_limit * total / bins as f64;
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > threshold {
            excess += *h - threshold;
            *h = threshold;
        }
    }
    if excess > 0.0 {
        let share = excess / bins as f64;
        for h in hist.iter_mut() {
            *h += share;
        }
    }
    let mut cdf = 0.0;
    hist.iter()
        .map(|&h| {
            cdf += h;
            255.0 * cdf / total
        })
        .collect()
}

fn equalize_plane(plane: &[u8], height: usize, width: usize, cfg: &ClaheConfig) -> Vec<u8> {
    let ybounds = tile_bounds(height, cfg.tiles_y);
    let xbounds = tile_bounds(width, cfg.tiles_x);
    let maps: Vec<Vec<Vec<f64>>> = (0..cfg.tiles_y)
        .map(|ty| {
            (0..cfg.tiles_x)
                .map(|tx| {
                    tile_mapping(
                        plane,
                        width,
                        (ybounds[ty], ybounds[ty + 1]),
                        (xbounds[tx], xbounds[tx + 1]),
                        cfg,
                    )
                })
                .collect()
        })
        .collect();
    let wy = blend_weights(height, &ybounds);
    let wx = blend_weights(width, &xbounds);
    let mut out = Vec::with_capacity(plane.len());
    for (y, &(t0, t1, fy)) in wy.iter().enumerate() {
        for (x, &(l0, l1, fx)) in wx.iter().enumerate() {
            let bin = usize::from(plane[y * width + x]) * cfg.bins / 256;
            let top = lerp(maps[t0][l0][bin], maps[t0][l1][bin], fx);
            let bottom = lerp(maps[t1][l0][bin], maps[t1][l1][bin], fx);
            out.push(round_u8(lerp(top, bottom, fy)));
        }
    }
    out
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let img = ImageU8::filled(64, 48, 1, 77);
        let out = clahe(&img, &ClaheConfig::default()).unwrap();
        let first = out.pixels()[0];
        assert!(out.pixels().iter().all(|&v| v == first));
        let rgb = ImageU8::filled(40, 40, 3, 90);
        let out = clahe(&rgb, &ClaheConfig::default()).unwrap();
        let p0 = &out.pixels()[..3];
        assert!(out.pixels().chunks(3).all(|p| p == p0));
    }

    #[test]
    fn too_small_is_an_error() {
        let img = ImageU8::filled(7, 20, 1, 0);
        assert!(matches!(
            clahe(&img, &ClaheConfig::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    /// Direct global histogram equalization, round(255 * cdf(v) / n).
    fn global_he(img: &ImageU8) -> Vec<u8> {
        let mut hist = [0usize; 256];
        for &v in img.pixels() {
            hist[v as usize] += 1;
        }
        let n = img.pixels().len() as f64;
        let mut lut = [0u8; 256];
        let mut acc = 0usize;
        for v in 0..256 {
            acc += hist[v];
            lut[v] = (255.0 * acc as f64 / n + 0.5).floor() as u8;
        }
        img.pixels().iter().map(|&v| lut[v as usize]).collect()
    }

    #[test]
    fn single_tile_unclipped_is_global_equalization() {
        let img = ImageU8::from_fn(37, 29, 1, |y, x, _| ((x * x + 3 * y) % 97 + 40) as u8);
        let cfg = ClaheConfig {
            tiles_x: 1,
            tiles_y: 1,
            clip_limit: f64::INFINITY,
            bins: 256,
        };
        assert_eq!(clahe(&img, &cfg).unwrap().pixels(), global_he(&img).as_slice());
    }

    /// Independent per-pixel reference: for each pixel, locate the
    /// surrounding tile centres from scratch, build each needed tile's
    /// histogram, clip, redistribute, and interpolate.
    fn reference(img: &ImageU8, tiles: usize, clip: f64) -> Vec<u8> {
        let (h, w) = (img.height(), img.width());
        let tile_range = |len: usize, t: usize| (t * len / tiles, (t + 1) * len / tiles);
        let map_value = |ty: usize, tx: usize, v: u8| -> f64 {
            let (y0, y1) = tile_range(h, ty);
            let (x0, x1) = tile_range(w, tx);
            let mut hist = vec![0.0f64; 256];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[img.get(y, x, 0) as usize] += 1.0;
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let limit = clip * n / 256.0;
            let excess: f64 = hist.iter().map(|&c| (c - limit).max(0.0)).sum();
            let clipped: Vec<f64> = hist.iter().map(|&c| c.min(limit) + excess / 256.0).collect();
            255.0 * clipped[..=v as usize].iter().sum::<f64>() / n
        };
        let locate = |p: usize, len: usize| -> (usize, usize, f64) {
            let c = |t: usize| {
                let (a, b) = tile_range(len, t);
                (a + b) as f64 / 2.0
            };
            let pc = p as f64 + 0.5;
            if pc <= c(0) {
                return (0, 0, 0.0);
            }
            if pc >= c(tiles - 1) {
                return (tiles - 1, tiles - 1, 0.0);
            }
            let mut t = 0;
            while c(t + 1) <= pc {
                t += 1;
            }
            (t, t + 1, (pc - c(t)) / (c(t + 1) - c(t)))
        };
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = img.get(y, x, 0);
                let (ty0, ty1, fy) = locate(y, h);
                let (tx0, tx1, fx) = locate(x, w);
                let a = map_value(ty0, tx0, v);
                let b = map_value(ty0, tx1, v);
                let c = map_value(ty1, tx0, v);
                let d = map_value(ty1, tx1, v);
                let top = a + fx * (b - a);
                let bot = c + fx * (d - c);
                out.push((top + fy * (bot - top) + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    #[test]
    fn gradient_matches_reference_implementation() {
        let img = ImageU8::from_fn(64, 64, 1, |y, x, _| ((x * 2 + y) * 255 / 189) as u8);
        let cfg = ClaheConfig {
            tiles_x: 2,
            tiles_y: 2,
            clip_limit: 2.0,
            bins: 256,
        };
        assert_eq!(clahe(&img, &cfg).unwrap().pixels(), reference(&img, 2, 2.0).as_slice());
    }

    #[test]
    fn unclipped_two_region_matches_unclipped_reference() {
        let img = ImageU8::from_fn(48, 48, 1, |y, x, _| {
            if x < 20 {
                30 + ((x + y) % 5) as u8
            } else {
                180 + ((x * y) % 7) as u8
            }
        });
        let cfg = ClaheConfig {
            tiles_x: 4,
            tiles_y: 4,
            clip_limit: 1e12,
            bins: 256,
        };
        assert_eq!(clahe(&img, &cfg).unwrap().pixels(), reference(&img, 4, f64::INFINITY).as_slice());
    }

    #[test]
    fn rgb_only_touches_luminance_range() {
        let img = ImageU8::from_fn(32, 32, 3, |y, x, c| (x * 6 + y * 2 + c * 10) as u8);
        let out = clahe(&img, &ClaheConfig { tiles_x: 4, tiles_y: 4, ..Default::default() }).unwrap();
        assert_eq!(out.channels(), 3);
        assert_eq!(out.height(), 32);
    }
}
