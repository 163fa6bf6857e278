//! sRGB <-> CIE L*a*b* under the D65 white point.

use super::{round_u8, ImageU8};
use crate::error::{Error, Result};

const WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];
const DELTA: f64 = 6.0 / 29.0;

/// Real-valued LAB pixels, `[L, a, b]` per pixel in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<[f64; 3]>,
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|v| srgb_to_linear(f64::from(v) / 255.0));
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (f(x / WHITE[0]), f(y / WHITE[1]), f(z / WHITE[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let (x, y, z) = (WHITE[0] * f_inv(fx), WHITE[1] * f_inv(fy), WHITE[2] * f_inv(fz));
    let r = 3.240_454_2 * x - 1.537_138_5 * y - 0.498_531_4 * z;
    let g = -0.969_266_0 * x + 1.876_010_8 * y + 0.041_556_0 * z;
    let b = 0.055_643_4 * x - 0.204_025_9 * y + 1.057_225_2 * z;
    [r, g, b].map(|c| round_u8(255.0 * linear_to_srgb(c.clamp(0.0, 1.0))))
}

pub fn to_lab(img: &ImageU8) -> Result<LabImage> {
    if img.channels() != 3 {
        return Err(Error::Channels(img.channels()));
    }
    let data = img
        .pixels()
        .chunks(3)
        .map(|p| rgb_to_lab([p[0], p[1], p[2]]))
        .collect();
    Ok(LabImage {
        height: img.height(),
        width: img.width(),
        data,
    })
}

pub fn from_lab(lab: &LabImage) -> Result<ImageU8> {
    let pixels = lab.data.iter().flat_map(|&p| lab_to_rgb(p)).collect();
    ImageU8::new(lab.height, lab.width, 3, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn white_and_black_points() {
        let w = rgb_to_lab([255, 255, 255]);
        assert!((w[0] - 100.0).abs() < 0.1);
        assert!(w[1].abs() < 0.1 && w[2].abs() < 0.1);
        let k = rgb_to_lab([0, 0, 0]);
        assert!(k[0].abs() < 1e-9 && k[1].abs() < 1e-9 && k[2].abs() < 1e-9);
    }

    #[test]
    fn gray_input_is_rejected() {
        assert!(matches!(to_lab(&ImageU8::filled(2, 2, 1, 0)), Err(Error::Channels(1))));
    }

    #[test]
    fn random_round_trip_within_one_level() {
        let mut r = rng::stream(11, "lab", 0);
        let img = ImageU8::from_fn(50, 40, 3, |_, _, _| r.random());
        let back = from_lab(&to_lab(&img).unwrap()).unwrap();
        let worst = img
            .pixels()
            .iter()
            .zip(back.pixels())
            .map(|(&a, &b)| (i16::from(a) - i16::from(b)).abs())
            .max()
            .unwrap();
        assert!(worst <= 1, "max error {worst}");
    }
}
