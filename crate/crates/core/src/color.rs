//! sRGB <-> CIELAB conversion (D65 white, 2 degree observer).
//!
//! Every CIELAB computation in the crate goes through this module so the
//! constants below are the only ones in use.

use std::sync::OnceLock;

use crate::buffer::ImageBuffer;
use crate::error::Result;

pub const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];
pub const SRGB_THRESHOLD: f64 = 0.04045;
pub const SRGB_SLOPE: f64 = 12.92;
pub const SRGB_GAMMA: f64 = 2.4;
pub const CIE_EPSILON: f64 = 216.0 / 24389.0;
pub const CIE_KAPPA: f64 = 24389.0 / 27.0;

/// Linear sRGB to XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

fn xyz_to_rgb() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| invert3(&RGB_TO_XYZ))
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            *v = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    out
}

#[inline]
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= SRGB_THRESHOLD {
        v / SRGB_SLOPE
    } else {
        ((v + 0.055) / 1.055).powf(SRGB_GAMMA)
    }
}

#[inline]
pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= SRGB_THRESHOLD / SRGB_SLOPE {
        v * SRGB_SLOPE
    } else {
        1.055 * v.max(0.0).powf(1.0 / SRGB_GAMMA) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > CIE_EPSILON {
        t.cbrt()
    } else {
        (CIE_KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
fn lab_f_inv(f: f64) -> f64 {
    let f3 = f * f * f;
    if f3 > CIE_EPSILON {
        f3
    } else {
        (116.0 * f - 16.0) / CIE_KAPPA
    }
}

pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let m = &RGB_TO_XYZ;
    let xyz = [0, 1, 2].map(|r| (m[r][0] * lin[0] + m[r][1] * lin[1] + m[r][2] * lin[2]) / WHITE_D65[r]);
    let (fx, fy, fz) = (lab_f(xyz[0]), lab_f(xyz[1]), lab_f(xyz[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// CIELAB to sRGB without gamut clipping.
pub fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let [l, a, b] = lab;
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let yr = if l > CIE_KAPPA * CIE_EPSILON { fy * fy * fy } else { l / CIE_KAPPA };
    let xyz = [lab_f_inv(fx) * WHITE_D65[0], yr * WHITE_D65[1], lab_f_inv(fz) * WHITE_D65[2]];
    let m = xyz_to_rgb();
    [0, 1, 2].map(|r| linear_to_srgb(m[r][0] * xyz[0] + m[r][1] * xyz[1] + m[r][2] * xyz[2]))
}

/// Planar CIELAB image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub height: usize,
    pub width: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LabImage {
    pub fn from_image(img: &ImageBuffer) -> Self {
        let n = img.height() * img.width();
        let (mut l, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for px in img.data().chunks_exact(3) {
            let lab = rgb_to_lab([px[0], px[1], px[2]]);
            l.push(lab[0]);
            a.push(lab[1]);
            b.push(lab[2]);
        }
        Self {
            height: img.height(),
            width: img.width(),
            l,
            a,
            b,
        }
    }

    /// Converts back to sRGB, clipping to the gamut. Returns the image and the
    /// fraction of clipped samples.
    pub fn to_image(&self, source_id: &str) -> Result<(ImageBuffer, f64)> {
        let mut data = Vec::with_capacity(self.l.len() * 3);
        for i in 0..self.l.len() {
            data.extend(lab_to_rgb([self.l[i], self.a[i], self.b[i]]));
        }
        ImageBuffer::from_unclipped(self.height, self.width, data, source_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_black() {
        let w = rgb_to_lab([1.0, 1.0, 1.0]);
        assert!((w[0] - 100.0).abs() < 1e-3 && w[1].abs() < 1e-2 && w[2].abs() < 1e-2, "{w:?}");
        let k = rgb_to_lab([0.0, 0.0, 0.0]);
        assert!(k.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn known_red() {
        // sRGB red in D65 Lab is about (53.24, 80.09, 67.20).
        let r = rgb_to_lab([1.0, 0.0, 0.0]);
        assert!((r[0] - 53.24).abs() < 0.02 && (r[1] - 80.09).abs() < 0.05 && (r[2] - 67.20).abs() < 0.05, "{r:?}");
    }

    #[test]
    fn round_trip_is_tight() {
        for i in 0..=20 {
            for j in 0..=20 {
                let rgb = [i as f64 / 20.0, j as f64 / 20.0, ((i * 7 + j * 3) % 21) as f64 / 20.0];
                let back = lab_to_rgb(rgb_to_lab(rgb));
                for k in 0..3 {
                    assert!((back[k] - rgb[k]).abs() < 1e-9, "{rgb:?} -> {back:?}");
                }
            }
        }
    }

    #[test]
    fn inverse_matrix_is_inverse() {
        let inv = xyz_to_rgb();
        for r in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..3).map(|k| inv[r][k] * RGB_TO_XYZ[k][c]).sum();
                assert!((v - if r == c { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
