//! Deterministic raster operations on 8-bit RGB(A) buffers.
//!
//! Every operation returns a fresh buffer; inputs are never mutated. Nothing
//! here draws random numbers; stochastic choices are made by the caller.

mod color;
mod resample;
mod transform;

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};

pub use color::{auto_levels, color_jitter, hsv_to_rgb, rgb_to_hsv, ColorJitterParams};
pub use resample::{
    apply_resize_policy, axis_weights, resample, ResampleKernel, ResamplePolicy, ResizeMode,
};
pub use transform::{flip_horizontal, rotate, rotated_canvas, sample_bilinear, warp_affine};

/// Decoded 8-bit raster, row-major, top-left origin, 3 (RGB) or 4 (RGBA)
/// interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be at least 1x1"));
        }
        if channels != 3 && channels != 4 {
            return Err(Error::invalid(format!(
                "unsupported channel count {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "buffer holds {} bytes, {width}x{height}x{channels} needs {expected}",
                data.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    /// Solid RGB image.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        let data = rgb.iter().copied().cycle().take(n * 3).collect();
        ImageBuffer::new(width, height, 3, data)
    }

    /// RGB image from a per-pixel function.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        ImageBuffer::new(width, height, 3, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub(crate) fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels as usize]
    }

    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        let p = self.pixel(x, y);
        [p[0], p[1], p[2]]
    }

    /// Copy of the `w x h` region starting at `(left, top)`.
    pub fn crop(&self, left: u32, top: u32, w: u32, h: u32) -> Result<ImageBuffer> {
        if w == 0 || h == 0 || left + w > self.width || top + h > self.height {
            return Err(Error::invalid(format!(
                "crop window {w}x{h}+{left}+{top} outside {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels as usize;
        let mut data = Vec::with_capacity(w as usize * h as usize * c);
        for y in top..top + h {
            let start = self.index(left, y);
            data.extend_from_slice(&self.data[start..start + w as usize * c]);
        }
        ImageBuffer::new(w, h, self.channels, data)
    }

    /// Drops alpha, if any.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Rec. 601 luma of every pixel, as floats in `[0, 255]`.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.channels as usize)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub fn from_dynamic(img: DynamicImage) -> Result<Self> {
        if img.color().has_alpha() {
            let rgba = img.into_rgba8();
            let (w, h) = rgba.dimensions();
            ImageBuffer::new(w, h, 4, rgba.into_raw())
        } else {
            let rgb = img.into_rgb8();
            let (w, h) = rgb.dimensions();
            ImageBuffer::new(w, h, 3, rgb.into_raw())
        }
    }

    /// Decodes PNG or JPEG bytes (format sniffed from the content).
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        ImageBuffer::from_dynamic(img)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ImageBuffer::decode(&bytes)
    }

    fn to_dynamic(&self) -> DynamicImage {
        if self.channels == 4 {
            DynamicImage::ImageRgba8(
                image::RgbaImage::from_raw(self.width, self.height, self.data.clone())
                    .expect("buffer length checked at construction"),
            )
        } else {
            DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(self.width, self.height, self.data.clone())
                    .expect("buffer length checked at construction"),
            )
        }
    }

    /// Canonical lossless interchange: 8-bit, non-interlaced PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_dynamic().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn to_jpeg(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(self.width, self.height, self.to_rgb().data)
                .expect("buffer length checked at construction"),
        )
        .write_to(&mut out, ImageFormat::Jpeg)?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}
