//! Image and latent containers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    #[default]
    Srgb,
}

/// An RGB image with values in `[0, 1]`, stored row-major and interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f64>,
    pub color_space: ColorSpace,
    pub source_id: String,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    /// Builds an image, rejecting non-finite or out-of-range values.
    pub fn new(height: usize, width: usize, data: Vec<f64>, source_id: impl Into<String>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim("image must be nonempty"));
        }
        if data.len() != height * width * 3 {
            return Err(Error::dim(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::invalid(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            data,
            color_space: ColorSpace::Srgb,
            source_id: source_id.into(),
        })
    }

    /// Builds an image after clamping into `[0, 1]`; NaNs are an error.
    /// Returns the image and the fraction of samples that were clipped.
    pub fn from_unclipped(
        height: usize,
        width: usize,
        mut data: Vec<f64>,
        source_id: impl Into<String>,
    ) -> Result<(Self, f64)> {
        let mut clipped = 0usize;
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    stage: "image clipping".into(),
                });
            }
            if *v < 0.0 || *v > 1.0 {
                clipped += 1;
                *v = v.clamp(0.0, 1.0);
            }
        }
        let n = data.len().max(1);
        Ok((Self::new(height, width, data, source_id)?, clipped as f64 / n as f64))
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3], source_id: impl Into<String>) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data, source_id)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    /// Applies `f` to each sample and clamps the result into range.
    pub fn map_clipped(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data = self.data.iter().map(|v| f(*v)).collect();
        Ok(Self::from_unclipped(self.height, self.width, data, self.source_id.clone())?.0)
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dim(format!(
                "image {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Quantizes to 8-bit sRGB, rounding to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8], source_id: impl Into<String>) -> Result<Self> {
        let data = bytes.iter().map(|b| *b as f64 / 255.0).collect();
        Self::new(height, width, data, source_id)
    }

    pub fn quantized(&self) -> Self {
        Self::from_rgb8(self.height, self.width, &self.to_rgb8(), self.source_id.clone())
            .expect("quantized values stay in range")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::Codec("buffer size mismatch".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
    }

    /// Loads a PNG; the source id is the file stem.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw(), id)
    }

    /// SHA-256 of the 8-bit quantized pixels, used in traces.
    pub fn content_hash(&self) -> String {
        hex_digest(&self.to_rgb8())
    }
}

/// A `channels x height x width` latent grid (channel-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    /// The diffusion timestep this latent is a valid sample for.
    pub timestep_tag: Option<usize>,
}

impl Latent {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::dim("latent shape must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::dim(format!(
                "latent {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            timestep_tag: None,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn with_tag(mut self, t: usize) -> Self {
        self.timestep_tag = Some(t);
        self
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, stage: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { stage: stage.into() })
        }
    }

    pub fn same_shape(&self, other: &Latent) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!("latent {:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||self - other|| / ||other||`.
    pub fn relative_l2(&self, other: &Latent) -> f64 {
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        diff / other.norm().max(f64::MIN_POSITIVE)
    }

    pub fn content_hash(&self) -> String {
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        hex_digest(&bytes)
    }
}

/// Draws an i.i.d. standard normal latent of the given shape.
pub fn gaussian_like(shape: (usize, usize, usize), rng: &mut RngStream) -> Result<Latent> {
    let (c, h, w) = shape;
    if c * h * w == 0 {
        return Err(Error::dim("gaussian_like needs a nonempty shape"));
    }
    Latent::new(c, h, w, rng.normals(c * h * w))
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}
