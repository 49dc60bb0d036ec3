//! Planar-interleaved float images, boolean masks, resampling and 8-bit PNG IO.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major image with interleaved channels. Row 0 is the top of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Row-major boolean coverage mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

/// Square window in pixel units, `[x0, x0 + size) × [y0, y0 + size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
}

impl CropWindow {
    pub fn full(size: usize) -> Self {
        Self { x0: 0, y0: 0, size }
    }
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize) -> Vec<f32>) -> Self {
        let mut img = Self::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                img.pixel_mut(x, y).copy_from_slice(&v[..channels]);
            }
        }
        img
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = self.index(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Bilinear lookup with pixel centers at half-integer coordinates and
    /// clamp-to-edge addressing. `(x, y)` are continuous pixel coordinates.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f32]) {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = (fx - x0 as f64) as f32;
        let ty = (fy - y0 as f64) as f32;
        let (p00, p10, p01, p11) = (
            self.pixel(x0, y0),
            self.pixel(x1, y0),
            self.pixel(x0, y1),
            self.pixel(x1, y1),
        );
        for c in 0..self.channels {
            let top = p00[c] + (p10[c] - p00[c]) * tx;
            let bottom = p01[c] + (p11[c] - p01[c]) * tx;
            out[c] = top + (bottom - top) * ty;
        }
    }

    /// Bilinear lookup in UV space (v up, row 0 at v = 1).
    pub fn sample_uv(&self, u: f64, v: f64, out: &mut [f32]) {
        self.sample_bilinear(u * self.width as f64, (1.0 - v) * self.height as f64, out);
    }

    /// Restriction of the image to `window`; no resampling.
    pub fn crop(&self, window: CropWindow) -> Image {
        let mut out = Image::new(window.size, window.size, self.channels);
        for y in 0..window.size {
            let src = self.index(window.x0, window.y0 + y);
            let dst = out.index(0, y);
            let n = window.size * self.channels;
            out.data[dst..dst + n].copy_from_slice(&self.data[src..src + n]);
        }
        out
    }

    /// Bilinear resample to `size × size` sampling at output pixel centers.
    /// An exact 2× reduction therefore averages 2×2 blocks.
    pub fn resample(&self, size: usize) -> Image {
        if size == self.width && size == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / size as f64;
        let sy = self.height as f64 / size as f64;
        let mut out = Image::new(size, size, self.channels);
        let mut px = vec![0f32; self.channels];
        for y in 0..size {
            for x in 0..size {
                self.sample_bilinear((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy, &mut px);
                out.pixel_mut(x, y).copy_from_slice(&px);
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Quantizes to 8 bits per channel. Only 1, 3 or 4 channels are encodable.
    pub fn to_rgb8_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            4 => image::ExtendedColorType::Rgba8,
            c => {
                return Err(Error::ShapeMismatch(format!(
                    "cannot encode a {c}-channel image as PNG"
                )))
            }
        };
        image::save_buffer(
            path,
            &self.to_rgb8_bytes(),
            self.width as u32,
            self.height as u32,
            color,
        )
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    /// Loads an 8-bit PNG as RGB in [0, 1].
    pub fn load_png_rgb(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Image {
            width: w as usize,
            height: h as usize,
            channels: 3,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    /// Loads an 8-bit PNG as a single luminance channel in [0, 1].
    pub fn load_png_gray(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = img.dimensions();
        Ok(Image {
            width: w as usize,
            height: h as usize,
            channels: 1,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }
}

pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn crop(&self, window: CropWindow) -> Mask {
        let mut out = Mask::new(window.size, window.size);
        for y in 0..window.size {
            for x in 0..window.size {
                out.set(x, y, self.get(window.x0 + x, window.y0 + y));
            }
        }
        out
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Pixels whose value in a single-channel image exceeds `threshold`.
    pub fn from_threshold(img: &Image, threshold: f32) -> Mask {
        Mask {
            width: img.width,
            height: img.height,
            data: img.data.iter().map(|&v| v > threshold).collect(),
        }
    }
}
