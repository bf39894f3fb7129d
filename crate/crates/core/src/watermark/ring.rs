//! Semantic watermark tied to the diffusion initial noise: a ring pattern
//! written into the Fourier spectrum of one latent channel.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::buffer::{gaussian_like, ImageBuffer, Latent};
use crate::diffusion::{ddim_invert, ddim_sample, Backend};
use crate::error::{Error, Result};
use crate::rng::{derive_stream, RngStream};

/// Sampling steps used when generating or inverting; capped by the schedule.
pub const RING_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct RingKey {
    pub channel: usize,
    pub height: usize,
    pub width: usize,
    pub pattern: Vec<Complex64>,
    pub mask: Vec<bool>,
    pub base_seed: u64,
}

/// Signed frequency index of bin `k` in an `n`-point DFT.
fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

fn mirror(k: usize, n: usize) -> usize {
    (n - k) % n
}

/// Radius of bin `(ky, kx)` measured on the wrapped frequency grid.
pub fn freq_radius(ky: usize, kx: usize, height: usize, width: usize) -> f64 {
    signed_freq(ky, height).hypot(signed_freq(kx, width))
}

/// Default ring radius for a latent of the given size.
pub fn default_radius(height: usize, width: usize) -> f64 {
    (height.min(width) as f64 * 10.0 / 64.0).max(2.0)
}

impl RingKey {
    /// Fresh key: one complex Gaussian value per integer ring, constant along
    /// each ring on one half of the spectrum and conjugated on the other, so
    /// the injected latent stays real and the pattern has the same law as the
    /// spectrum of white noise.
    pub fn generate(
        shape: (usize, usize, usize),
        channel: usize,
        radius: f64,
        strength: f64,
        base_seed: u64,
    ) -> Result<Self> {
        let (c, h, w) = shape;
        if channel >= c {
            return Err(Error::invalid(format!("ring channel {channel} out of range for {c} channels")));
        }
        if !(radius > 0.0) {
            return Err(Error::invalid(format!("ring radius must be positive, got {radius}")));
        }
        let mut rng = derive_stream(base_seed, "fourier_ring:pattern")?;
        let rings = radius.round() as usize + 1;
        let scale = strength * ((h * w) as f64 / 2.0).sqrt();
        let values: Vec<Complex64> = (0..rings)
            .map(|_| {
                let re = rng.normal();
                Complex64::new(scale * re, scale * rng.normal())
            })
            .collect();
        let mut pattern = vec![Complex64::new(0.0, 0.0); h * w];
        let mut mask = vec![false; h * w];
        for ky in 0..h {
            for kx in 0..w {
                let r = freq_radius(ky, kx, h, w);
                if r <= radius {
                    let k = ky * w + kx;
                    let m = mirror(ky, h) * w + mirror(kx, w);
                    let v = values[(r.round() as usize).min(rings - 1)];
                    mask[k] = true;
                    pattern[k] = match k.cmp(&m) {
                        std::cmp::Ordering::Less => v,
                        std::cmp::Ordering::Greater => v.conj(),
                        std::cmp::Ordering::Equal => Complex64::new(v.re * 2f64.sqrt(), 0.0),
                    };
                }
            }
        }
        let key = RingKey {
            channel,
            height: h,
            width: w,
            pattern,
            mask,
            base_seed,
        };
        key.validate()?;
        Ok(key)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.mask.len() != n || self.pattern.len() != n {
            return Err(Error::dim(format!(
                "ring key grids must have {n} entries, got mask {} / pattern {}",
                self.mask.len(),
                self.pattern.len()
            )));
        }
        if !self.mask.iter().any(|m| *m) {
            return Err(Error::invalid("ring mask is empty"));
        }
        for ky in 0..self.height {
            for kx in 0..self.width {
                let k = ky * self.width + kx;
                let m = mirror(ky, self.height) * self.width + mirror(kx, self.width);
                if self.mask[k] != self.mask[m] {
                    return Err(Error::invalid(format!("ring mask not symmetric at ({ky}, {kx})")));
                }
                if self.mask[k] && (self.pattern[k] - self.pattern[m].conj()).norm() > 1e-9 {
                    return Err(Error::invalid(format!("ring pattern not Hermitian at ({ky}, {kx})")));
                }
            }
        }
        Ok(())
    }

    /// Masked bins with exactly one of each conjugate pair.
    pub fn half_spectrum(&self) -> Vec<usize> {
        (0..self.height * self.width)
            .filter(|&k| {
                let (ky, kx) = (k / self.width, k % self.width);
                let m = mirror(ky, self.height) * self.width + mirror(kx, self.width);
                self.mask[k] && k <= m
            })
            .collect()
    }

    fn check_latent(&self, z: &Latent) -> Result<()> {
        let (c, h, w) = z.shape();
        if h != self.height || w != self.width || self.channel >= c {
            return Err(Error::dim(format!(
                "ring key is for {}x{} (channel {}), latent is {c}x{h}x{w}",
                self.height, self.width, self.channel
            )));
        }
        Ok(())
    }
}

fn fft2(plane: &[Complex64], h: usize, w: usize, inverse: bool) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut data = plane.to_vec();
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            column[i] = data[i * w + j];
        }
        col.process(&mut column);
        for i in 0..h {
            data[i * w + j] = column[i];
        }
    }
    if inverse {
        let n = (h * w) as f64;
        data.iter_mut().for_each(|v| *v /= n);
    }
    data
}

/// Unnormalised 2-D DFT of one latent channel.
pub fn channel_spectrum(z: &Latent, channel: usize) -> Vec<Complex64> {
    let plane: Vec<Complex64> = z.channel(channel).iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft2(&plane, z.height(), z.width(), false)
}

/// Overwrites the masked bins of the key's channel with the ring pattern.
pub fn inject_ring(z: &Latent, key: &RingKey) -> Result<Latent> {
    key.check_latent(z)?;
    let mut spec = channel_spectrum(z, key.channel);
    for (k, s) in spec.iter_mut().enumerate() {
        if key.mask[k] {
            *s = key.pattern[k];
        }
    }
    let back = fft2(&spec, key.height, key.width, true);
    let mut out = z.clone();
    for (o, v) in out.channel_mut(key.channel).iter_mut().zip(&back) {
        *o = v.re;
    }
    Ok(out)
}

/// Mean absolute deviation from the ring pattern over the masked half-spectrum.
pub fn ring_distance(z: &Latent, key: &RingKey) -> Result<f64> {
    key.check_latent(z)?;
    let spec = channel_spectrum(z, key.channel);
    let bins = key.half_spectrum();
    Ok(bins.iter().map(|&k| (spec[k] - key.pattern[k]).norm()).sum::<f64>() / bins.len() as f64)
}

fn initial_noise(prompt_seed: u64, shape: (usize, usize, usize)) -> Result<Latent> {
    let mut rng: RngStream = derive_stream(prompt_seed, "fourier_ring:init")?;
    gaussian_like(shape, &mut rng)
}

fn generate(backend: &Backend, z_t: Latent, prompt_seed: u64) -> Result<ImageBuffer> {
    let t = backend.schedule.len();
    let steps = RING_STEPS.min(t);
    let null = backend.null_conditioning();
    let z0 = ddim_sample(backend, &z_t.with_tag(t), steps, &null, 1.0, None)?;
    backend.decode(&z0, &format!("gen{prompt_seed}"))
}

/// Generates a marked image from `prompt_seed`.
pub fn embed_fourier_ring(prompt_seed: u64, key: &RingKey, backend: &Backend) -> Result<ImageBuffer> {
    let z = initial_noise(prompt_seed, (backend.autoencoder.latent_channels(), key.height, key.width))?;
    generate(backend, inject_ring(&z, key)?, prompt_seed)
}

/// Same generation as [`embed_fourier_ring`] without the ring.
pub fn generate_unmarked(prompt_seed: u64, shape: (usize, usize, usize), backend: &Backend) -> Result<ImageBuffer> {
    generate(backend, initial_noise(prompt_seed, shape)?, prompt_seed)
}

/// Estimated initial noise of `x` by full DDIM inversion with null conditioning.
pub fn estimate_initial_noise(x: &ImageBuffer, backend: &Backend) -> Result<Latent> {
    let z0 = backend.encode(x)?;
    let t = backend.schedule.len();
    ddim_invert(backend, &z0, RING_STEPS.min(t), &backend.null_conditioning(), 1.0, Some(t))
}

/// Negative ring distance of the inverted noise; larger means more watermark.
pub fn ring_statistic(x: &ImageBuffer, key: &RingKey, backend: &Backend) -> Result<f64> {
    Ok(-ring_distance(&estimate_initial_noise(x, backend)?, key)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_symmetric_and_nonempty() {
        let key = RingKey::generate((4, 16, 16), 3, 2.5, 1.0, 9).unwrap();
        key.validate().unwrap();
        assert!(key.mask[0]);
        assert!(!key.mask[8 * 16 + 8]);
        let count = key.mask.iter().filter(|m| **m).count();
        assert_eq!(count, 21);
    }

    #[test]
    fn fft_round_trip() {
        let mut rng = derive_stream(3, "fft").unwrap();
        let z = gaussian_like((1, 8, 12), &mut rng).unwrap();
        let spec = channel_spectrum(&z, 0);
        let back = fft2(&spec, 8, 12, true);
        for (a, b) in z.data().iter().zip(&back) {
            assert!((a - b.re).abs() < 1e-12 && b.im.abs() < 1e-12);
        }
    }

    #[test]
    fn injected_latent_has_zero_distance() {
        let key = RingKey::generate((4, 16, 16), 3, 2.5, 1.0, 5).unwrap();
        let z = initial_noise(1, (4, 16, 16)).unwrap();
        let marked = inject_ring(&z, &key).unwrap();
        assert!(ring_distance(&marked, &key).unwrap() < 1e-9);
        assert!(ring_distance(&z, &key).unwrap() > 1.0);
        assert_eq!(marked.channel(0), z.channel(0));
    }

    #[test]
    fn asymmetric_mask_rejected() {
        let mut key = RingKey::generate((4, 8, 8), 0, 2.0, 1.0, 5).unwrap();
        key.mask[1] = false;
        assert!(key.validate().is_err());
    }
}
