//! Full-reference image quality.

use crate::attack::BoundaryMode;
use crate::baseline::signal::gaussian_kernel;
use crate::buffer::ImageBuffer;
use crate::error::Result;

/// PSNR in dB with peak 1; infinite for identical images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.same_dims(b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn filter(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as i64;
    let b = BoundaryMode::Reflect;
    let mut tmp = vec![0.0; plane.len()];
    for i in 0..h {
        for j in 0..w {
            tmp[i * w + j] = k
                .iter()
                .enumerate()
                .map(|(t, kt)| kt * plane[i * w + b.resolve(j as i64 + t as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; plane.len()];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = k
                .iter()
                .enumerate()
                .map(|(t, kt)| kt * tmp[b.resolve(i as i64 + t as i64 - r, h) * w + j])
                .sum();
        }
    }
    out
}

/// Mean SSIM over RGB channels with an 11-tap Gaussian window (sigma 1.5).
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.same_dims(b)?;
    let (h, w) = a.dims();
    let k = gaussian_kernel(1.5);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data().iter().skip(c).step_by(3).copied().collect();
        let y: Vec<f64> = b.data().iter().skip(c).step_by(3).copied().collect();
        let mx = filter(&x, h, w, &k);
        let my = filter(&y, h, w, &k);
        let xx = filter(&x.iter().map(|v| v * v).collect::<Vec<_>>(), h, w, &k);
        let yy = filter(&y.iter().map(|v| v * v).collect::<Vec<_>>(), h, w, &k);
        let xy = filter(&x.iter().zip(&y).map(|(p, q)| p * q).collect::<Vec<_>>(), h, w, &k);
        let mut s = 0.0;
        for i in 0..h * w {
            let (vx, vy, cxy) = (xx[i] - mx[i] * mx[i], yy[i] - my[i] * my[i], xy[i] - mx[i] * my[i]);
            s += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2))
                / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += s / (h * w) as f64;
    }
    Ok(total / 3.0)
}
