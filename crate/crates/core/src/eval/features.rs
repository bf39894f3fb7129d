//! Image embeddings for the Fréchet distance.

use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};
use crate::rng::derive_stream;

pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> String;

    fn dim(&self) -> usize;

    fn extract(&self, x: &ImageBuffer) -> Result<Vec<f64>>;
}

/// Fixed random projection of 8x8 RGB patches, ReLU, then mean and standard
/// deviation pooling over all patches. Deterministic in the seed.
#[derive(Debug, Clone)]
pub struct RandomPatchEmbedding {
    seed: u64,
    patch: usize,
    width: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

pub const DEFAULT_FEATURE_SEED: u64 = 0x5eed_fea7;

impl RandomPatchEmbedding {
    pub fn new(seed: u64, patch: usize, width: usize) -> Result<Self> {
        if patch == 0 || width == 0 {
            return Err(Error::invalid("patch size and width must be positive"));
        }
        let inputs = patch * patch * 3;
        let mut rng = derive_stream(seed, "features:projection")?;
        let scale = 1.0 / (inputs as f64).sqrt();
        let weights = (0..width * inputs).map(|_| rng.normal() * scale).collect();
        let bias = (0..width).map(|_| rng.normal() * 0.1).collect();
        Ok(Self {
            seed,
            patch,
            width,
            weights,
            bias,
        })
    }
}

impl Default for RandomPatchEmbedding {
    fn default() -> Self {
        Self::new(DEFAULT_FEATURE_SEED, 8, 16).expect("valid defaults")
    }
}

impl FeatureExtractor for RandomPatchEmbedding {
    fn name(&self) -> String {
        format!("random-patch-{}x{}-w{}-seed{:x}", self.patch, self.patch, self.width, self.seed)
    }

    fn dim(&self) -> usize {
        2 * self.width
    }

    fn extract(&self, x: &ImageBuffer) -> Result<Vec<f64>> {
        let (h, w) = x.dims();
        let p = self.patch;
        if h < p || w < p {
            return Err(Error::dim(format!("image {h}x{w} smaller than the {p}x{p} patch")));
        }
        let inputs = p * p * 3;
        let mut sum = vec![0.0; self.width];
        let mut sq = vec![0.0; self.width];
        let mut count = 0.0;
        let mut buf = vec![0.0; inputs];
        for bi in 0..h / p {
            for bj in 0..w / p {
                for y in 0..p {
                    for xx in 0..p {
                        let px = x.pixel(bi * p + y, bj * p + xx);
                        let o = (y * p + xx) * 3;
                        buf[o..o + 3].copy_from_slice(&(px.map(|v| v - 0.5)));
                    }
                }
                for k in 0..self.width {
                    let row = &self.weights[k * inputs..(k + 1) * inputs];
                    let a: f64 = row.iter().zip(&buf).map(|(w, v)| w * v).sum::<f64>() + self.bias[k];
                    let r = a.max(0.0);
                    sum[k] += r;
                    sq[k] += r * r;
                }
                count += 1.0;
            }
        }
        let mut out: Vec<f64> = sum.iter().map(|s| s / count).collect();
        out.extend(sq.iter().zip(&sum).map(|(q, s)| (q / count - (s / count).powi(2)).max(0.0).sqrt()));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let e = RandomPatchEmbedding::default();
        let x = ImageBuffer::filled(32, 24, [0.2, 0.6, 0.9], "f").unwrap();
        let a = e.extract(&x).unwrap();
        assert_eq!(a.len(), e.dim());
        assert_eq!(a, RandomPatchEmbedding::default().extract(&x).unwrap());
        assert!(a[e.dim() / 2..].iter().all(|s| s.abs() < 1e-6));
    }
}
