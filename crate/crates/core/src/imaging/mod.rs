//! 8-bit images: decoding, PNG encoding, colour conversion, CLAHE,
//! geometric transforms and heatmap overlays.

mod clahe;
mod color;
mod overlay;
mod transform;

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

pub use clahe::{clahe, ClaheConfig};
pub use color::{from_lab, to_lab, LabImage};
pub use overlay::{jet, overlay_heatmap, Heatmap, JET_CONTROL_POINTS};
pub use transform::{
    adjust_contrast, hflip, resize_bilinear, resize_bilinear_real, rotate90, rotate_small,
    translate, zoom, Rotation,
};

/// Row-major `height x width x channels` bytes, `channels` in {1, 3}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Channels(channels));
        }
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("empty image {height}x{width}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}x{width}x{channels} image needs {} bytes, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("valid dimensions")
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Self {
        let mut pixels = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, pixels).expect("valid dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    /// Gray replicated to three channels; RGB images are returned as is.
    pub fn to_rgb(&self) -> ImageU8 {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        ImageU8::new(self.height, self.width, 3, pixels).expect("valid dimensions")
    }

    /// ITU-R BT.601 luma for RGB images; gray images are returned as is.
    pub fn to_gray(&self) -> ImageU8 {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks(3)
            .map(|p| {
                let l = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
                round_u8(l)
            })
            .collect();
        ImageU8::new(self.height, self.width, 1, pixels).expect("valid dimensions")
    }

    pub fn with_channels(&self, channels: usize) -> Result<ImageU8> {
        match channels {
            1 => Ok(self.to_gray()),
            3 => Ok(self.to_rgb()),
            c => Err(Error::Channels(c)),
        }
    }
}

/// Round half up and clamp into `[0, 255]`.
#[inline]
pub fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Decodes a PNG or JPEG file. Gray sources stay single-channel; anything
/// else is converted to 8-bit RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|message| Error::Decode {
        path: path.to_path_buf(),
        message,
    })
}

fn decode_image(bytes: &[u8]) -> std::result::Result<ImageU8, String> {
    let reader = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Jpeg) => {}
        Some(other) => return Err(format!("unsupported format {other:?}")),
        None => return Err("unrecognized format".into()),
    }
    let img = reader.decode().map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let out = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => ImageU8::new(h, w, 1, img.to_luma8().into_raw()),
        other => ImageU8::new(h, w, 3, other.to_rgb8().into_raw()),
    };
    out.map_err(|e| e.to_string())
}

/// PNG bytes with fixed filter and compression settings.
pub fn encode_png(img: &ImageU8) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let encoder = PngEncoder::new_with_quality(&mut buf, CompressionType::Default, FilterType::Sub);
    let color = if img.channels == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    encoder
        .write_image(&img.pixels, img.width as u32, img.height as u32, color)
        .map_err(|e| Error::Format(format!("png encoding failed: {e}")))?;
    Ok(buf)
}

pub fn save_png(img: &ImageU8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("black.png");
        let img = ImageU8::filled(2, 2, 1, 0);
        save_png(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn rgb_round_trip_and_center_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let img = ImageU8::from_fn(3, 3, 3, |y, x, c| (y * 40 + x * 7 + c * 3) as u8);
        save_png(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);

        let mut fixture = ImageU8::filled(3, 3, 1, 10);
        fixture.set(1, 1, 0, 128);
        let q = dir.path().join("fixture.png");
        save_png(&fixture, &q).unwrap();
        assert_eq!(load_image(&q).unwrap().get(1, 1, 0), 128);
    }

    #[test]
    fn png_encoding_is_deterministic() {
        let img = ImageU8::from_fn(17, 9, 3, |y, x, c| ((y * 31) ^ (x * 17) ^ c) as u8);
        assert_eq!(encode_png(&img).unwrap(), encode_png(&img).unwrap());
    }

    #[test]
    fn jpeg_is_readable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.jpg");
        image::GrayImage::from_pixel(8, 8, image::Luma([100u8])).save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (8, 8, 1));
        assert!(img.pixels().iter().all(|&v| (i32::from(v) - 100).abs() <= 2));
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image(dir.path().join("missing.png")), Err(Error::Io { .. })));
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"definitely not an image").unwrap();
        assert!(matches!(load_image(&bad), Err(Error::Decode { .. })));
    }

    #[test]
    fn bad_construction() {
        assert!(ImageU8::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(ImageU8::new(2, 2, 1, vec![0; 3]).is_err());
    }
}
