//! Pixel-space distortions and crops.

use jpeg_encoder::{ColorType, Encoder, SamplingFactor};

use crate::attack::BoundaryMode;
use crate::buffer::ImageBuffer;
use crate::color::LabImage;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Scales CIELAB lightness by `factor`, keeping chroma.
pub fn brightness(x: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    check_factor("brightness", factor)?;
    if factor == 1.0 {
        return Ok(x.clone());
    }
    let mut lab = LabImage::from_image(x);
    lab.l.iter_mut().for_each(|l| *l *= factor);
    Ok(lab.to_image(&x.source_id)?.0)
}

/// `mean_c + factor (x - mean_c)` per channel.
pub fn contrast(x: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    check_factor("contrast", factor)?;
    if factor == 1.0 {
        return Ok(x.clone());
    }
    let n = (x.height() * x.width()) as f64;
    let mut mean = [0.0; 3];
    for p in x.data().chunks_exact(3) {
        for c in 0..3 {
            mean[c] += p[c] / n;
        }
    }
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| mean[k % 3] + factor * (v - mean[k % 3]))
        .collect();
    Ok(ImageBuffer::from_unclipped(x.height(), x.width(), data, x.source_id.clone())?.0)
}

fn check_factor(name: &str, f: f64) -> Result<()> {
    if !(f.is_finite() && f >= 0.0) {
        return Err(Error::invalid(format!("{name} factor must be finite and non-negative, got {f}")));
    }
    Ok(())
}

/// Baseline JPEG at `quality` with 4:2:0 chroma subsampling, decoded back.
pub fn jpeg(x: &ImageBuffer, quality: u8) -> Result<ImageBuffer> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("jpeg quality must be in 1..=100, got {quality}")));
    }
    let (h, w) = x.dims();
    let (hu, wu) = (
        u16::try_from(h).map_err(|_| Error::dim("image too tall for JPEG"))?,
        u16::try_from(w).map_err(|_| Error::dim("image too wide for JPEG"))?,
    );
    let mut buf = Vec::new();
    let mut enc = Encoder::new(&mut buf, quality);
    enc.set_sampling_factor(SamplingFactor::R_4_2_0);
    enc.encode(&x.to_rgb8(), wu, hu, ColorType::Rgb)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let img = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?.to_rgb8();
    ImageBuffer::from_rgb8(h, w, img.as_raw(), x.source_id.clone())
}

/// Normalised 1-D Gaussian taps, radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(x: &ImageBuffer, sigma: f64) -> Result<ImageBuffer> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!("blur sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (h, w) = x.dims();
    let src = x.data();
    let mut tmp = vec![0.0; src.len()];
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                tmp[(i * w + j) * 3 + c] = k
                    .iter()
                    .enumerate()
                    .map(|(t, kt)| kt * src[(i * w + BoundaryMode::Reflect.resolve(j as i64 + t as i64 - r, w)) * 3 + c])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                out[(i * w + j) * 3 + c] = k
                    .iter()
                    .enumerate()
                    .map(|(t, kt)| kt * tmp[(BoundaryMode::Reflect.resolve(i as i64 + t as i64 - r, h) * w + j) * 3 + c])
                    .sum();
            }
        }
    }
    Ok(ImageBuffer::from_unclipped(h, w, out, x.source_id.clone())?.0)
}

/// Adds `N(0, sigma^2)` per sample, then clips.
pub fn gaussian_noise(x: &ImageBuffer, sigma: f64, rng: &mut RngStream) -> Result<ImageBuffer> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let data = x.data().iter().map(|v| v + sigma * rng.normal()).collect();
    Ok(ImageBuffer::from_unclipped(x.height(), x.width(), data, x.source_id.clone())?.0)
}

/// Bilinear resize of the `(top, left, ch, cw)` window to `(h, w)`, half-pixel centred.
pub fn crop_resize(x: &ImageBuffer, top: usize, left: usize, ch: usize, cw: usize, h: usize, w: usize) -> Result<ImageBuffer> {
    if ch == 0 || cw == 0 || top + ch > x.height() || left + cw > x.width() {
        return Err(Error::dim(format!(
            "crop window {ch}x{cw} at ({top}, {left}) outside {}x{}",
            x.height(),
            x.width()
        )));
    }
    let (sy, sx) = (ch as f64 / h as f64, cw as f64 / w as f64);
    let coord = |d: usize, s: f64, n: usize| {
        let p = ((d as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
        let p0 = p.floor() as usize;
        (p0, (p0 + 1).min(n - 1), p - p0 as f64)
    };
    let mut out = Vec::with_capacity(h * w * 3);
    for i in 0..h {
        let (y0, y1, fy) = coord(i, sy, ch);
        for j in 0..w {
            let (x0, x1, fx) = coord(j, sx, cw);
            for c in 0..3 {
                let g = |y: usize, xx: usize| x.get(top + y, left + xx, c);
                let top_row = (1.0 - fx) * g(y0, x0) + fx * g(y0, x1);
                let bottom = (1.0 - fx) * g(y1, x0) + fx * g(y1, x1);
                out.push((1.0 - fy) * top_row + fy * bottom);
            }
        }
    }
    Ok(ImageBuffer::from_unclipped(h, w, out, x.source_id.clone())?.0)
}

fn crop_size(x: &ImageBuffer, ratio: f64) -> Result<(usize, usize)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("crop ratio must be in (0, 1], got {ratio}")));
    }
    let (h, w) = x.dims();
    Ok((((h as f64 * ratio).round() as usize).max(1), ((w as f64 * ratio).round() as usize).max(1)))
}

pub fn center_crop(x: &ImageBuffer, ratio: f64) -> Result<ImageBuffer> {
    let (ch, cw) = crop_size(x, ratio)?;
    let (h, w) = x.dims();
    if (ch, cw) == (h, w) {
        return Ok(x.clone());
    }
    crop_resize(x, (h - ch) / 2, (w - cw) / 2, ch, cw, h, w)
}

pub fn random_crop(x: &ImageBuffer, ratio: f64, rng: &mut RngStream) -> Result<ImageBuffer> {
    let (ch, cw) = crop_size(x, ratio)?;
    let (h, w) = x.dims();
    if (ch, cw) == (h, w) {
        return Ok(x.clone());
    }
    let top = rng.below(h - ch + 1);
    let left = rng.below(w - cw + 1);
    crop_resize(x, top, left, ch, cw, h, w)
}
