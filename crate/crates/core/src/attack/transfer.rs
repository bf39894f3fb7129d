//! CIELAB colour and contrast transfer against the watermarked image.

use crate::buffer::ImageBuffer;
use crate::color::LabImage;
use crate::error::Result;

/// Below this the candidate's luminance is treated as flat.
pub const FLAT_SIGMA: f64 = 1e-6;

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// `(sigma_w / sigma_c)(L - mu_c) + mu_w`, before any clipping. A flat
/// candidate gets only the mean shift, and a warning.
pub fn align_luminance(l_c: &[f64], l_w: &[f64]) -> (Vec<f64>, Option<String>) {
    let (mu_c, sigma_c) = mean_std(l_c);
    let (mu_w, sigma_w) = mean_std(l_w);
    if sigma_c < FLAT_SIGMA {
        let out = l_c.iter().map(|l| l - mu_c + mu_w).collect();
        return (
            out,
            Some(format!("flat luminance (sigma {sigma_c:.3e}); applied mean shift only")),
        );
    }
    let gain = sigma_w / sigma_c;
    (l_c.iter().map(|l| gain * (l - mu_c) + mu_w).collect(), None)
}

/// Result of a transfer stage: image, clipped-sample fraction, optional warning.
#[derive(Debug, Clone)]
pub struct Transferred {
    pub image: ImageBuffer,
    pub clipped_fraction: f64,
    pub warning: Option<String>,
}

/// Lightness of `x_opt` with the chroma of `x_w`.
pub fn color_transfer(x_opt: &ImageBuffer, x_w: &ImageBuffer) -> Result<Transferred> {
    x_opt.same_dims(x_w)?;
    let opt = LabImage::from_image(x_opt);
    let mut lab = LabImage::from_image(x_w);
    lab.l = opt.l;
    let (image, clipped_fraction) = lab.to_image(&x_opt.source_id)?;
    Ok(Transferred {
        image,
        clipped_fraction,
        warning: None,
    })
}

/// Aligns the lightness statistics of `x_c` to those of `x_w`; chroma from `x_w`.
pub fn contrast_transfer(x_c: &ImageBuffer, x_w: &ImageBuffer) -> Result<Transferred> {
    x_c.same_dims(x_w)?;
    let c = LabImage::from_image(x_c);
    let mut lab = LabImage::from_image(x_w);
    let (l, warning) = align_luminance(&c.l, &lab.l);
    lab.l = l;
    let (image, clipped_fraction) = lab.to_image(&x_c.source_id)?;
    Ok(Transferred {
        image,
        clipped_fraction,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::rgb_to_lab;
    use crate::rng::derive_stream;

    #[test]
    fn linear_formula_example() {
        // candidate: mean 50, std 10; target: mean 60, std 20
        let l_c = [40.0, 60.0];
        let l_w = [40.0, 80.0];
        let (mu_c, s_c) = mean_std(&l_c);
        let (mu_w, s_w) = mean_std(&l_w);
        assert_eq!((mu_c, s_c, mu_w, s_w), (50.0, 10.0, 60.0, 20.0));
        let (mapped, w) = align_luminance(&[40.0, 60.0], &l_w);
        assert!(w.is_none());
        assert_eq!(mapped, vec![40.0, 80.0]);
        assert_eq!((s_w / s_c) * (55.0 - mu_c) + mu_w, 70.0);
    }

    #[test]
    fn flat_candidate_only_shifts() {
        let (out, warn) = align_luminance(&[30.0; 4], &[10.0, 20.0, 30.0, 40.0]);
        assert!(warn.unwrap().contains("mean shift"));
        assert_eq!(out, vec![25.0; 4]);
    }

    #[test]
    fn aligned_stats_are_exact_and_idempotent() {
        let mut rng = derive_stream(8, "lum").unwrap();
        let l_c: Vec<f64> = (0..500).map(|_| 50.0 + 15.0 * rng.normal()).collect();
        let l_w: Vec<f64> = (0..500).map(|_| 40.0 + 7.0 * rng.normal()).collect();
        let (once, _) = align_luminance(&l_c, &l_w);
        let (mu, sd) = mean_std(&once);
        let (mu_w, sd_w) = mean_std(&l_w);
        assert!((mu - mu_w).abs() < 1e-6 && (sd - sd_w).abs() < 1e-6);
        let (twice, _) = align_luminance(&once, &l_w);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn color_transfer_keeps_target_chroma() {
        let mut rng = derive_stream(9, "img").unwrap();
        let mut rand_img = |id: &str| {
            let data: Vec<f64> = (0..8 * 8 * 3).map(|_| 0.4 + 0.2 * rng.uniform()).collect();
            ImageBuffer::new(8, 8, data, id).unwrap()
        };
        let (x_opt, x_w) = (rand_img("opt"), rand_img("w"));
        let out = color_transfer(&x_opt, &x_w).unwrap();
        let same = color_transfer(&x_w, &x_w).unwrap();
        assert_eq!(out.clipped_fraction, 0.0);
        for p in 0..64 {
            let (y, x) = (p / 8, p % 8);
            let w = rgb_to_lab(x_w.pixel(y, x));
            let o = rgb_to_lab(x_opt.pixel(y, x));
            let got = rgb_to_lab(out.image.pixel(y, x));
            assert!((got[1] - w[1]).abs() < 1e-4 && (got[2] - w[2]).abs() < 1e-4);
            assert!((got[0] - o[0]).abs() < 1e-4);
            for c in 0..3 {
                assert!((same.image.get(y, x, c) - x_w.get(y, x, c)).abs() <= 1.0 / 255.0 + 1e-6);
            }
        }
    }
}
