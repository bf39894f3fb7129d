//! Latent viewpoint modulation: global translation with bilinear sampling.

use serde::{Deserialize, Serialize};

use crate::buffer::Latent;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// How reads outside the latent grid are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    #[default]
    EdgeReplicate,
    /// Mirror about the edge sample, without repeating it.
    Reflect,
    Wrap,
}

impl BoundaryMode {
    /// Maps an arbitrary integer index into `0..n`.
    pub fn resolve(self, i: i64, n: usize) -> usize {
        let n = n as i64;
        if n == 1 {
            return 0;
        }
        match self {
            BoundaryMode::EdgeReplicate => i.clamp(0, n - 1) as usize,
            BoundaryMode::Wrap => i.rem_euclid(n) as usize,
            BoundaryMode::Reflect => {
                let period = 2 * (n - 1);
                let k = i.rem_euclid(period);
                (if k < n { k } else { period - k }) as usize
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    #[default]
    GlobalTranslation,
}

/// A camera translation. Offsets are `(along i, along j)`: output site
/// `(i, j)` reads the input at `(i + d0, j + d1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub kind: ViewKind,
    pub delta_px: [f64; 2],
    pub delta_latent: [f64; 2],
    pub boundary: BoundaryMode,
}

impl ViewTransform {
    pub fn translation(delta_px: [f64; 2], factor: usize, boundary: BoundaryMode) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("downsampling factor must be positive"));
        }
        if !delta_px.iter().all(|d| d.is_finite()) {
            return Err(Error::invalid(format!("non-finite translation {delta_px:?}")));
        }
        let f = factor as f64;
        Ok(Self {
            kind: ViewKind::GlobalTranslation,
            delta_px,
            delta_latent: [delta_px[0] / f, delta_px[1] / f],
            boundary,
        })
    }

    /// Translation acting directly on latent cells.
    pub fn latent(delta_latent: [f64; 2], boundary: BoundaryMode) -> Self {
        Self {
            kind: ViewKind::GlobalTranslation,
            delta_px: delta_latent,
            delta_latent,
            boundary,
        }
    }
}

/// Pixel magnitude interval; the sign is sampled separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationRange {
    pub min_px: f64,
    pub max_px: f64,
}

impl Default for TranslationRange {
    fn default() -> Self {
        Self {
            min_px: 24.0,
            max_px: 32.0,
        }
    }
}

impl TranslationRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_px > 0.0 && self.min_px <= self.max_px && self.max_px.is_finite()) {
            return Err(Error::invalid(format!(
                "translation range [{}, {}] must satisfy 0 < min <= max",
                self.min_px, self.max_px
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// One sign for both axes, so motion is along a diagonal.
    #[default]
    Shared,
    Independent,
}

/// Draws a translation from `[min, max]` (or its negation) per axis.
pub fn sample_translation(range: &TranslationRange, sign: SignMode, rng: &mut RngStream) -> Result<[f64; 2]> {
    range.validate()?;
    let mags = [
        rng.uniform_range(range.min_px, range.max_px),
        rng.uniform_range(range.min_px, range.max_px),
    ];
    let s0 = if rng.coin() { 1.0 } else { -1.0 };
    let s1 = match sign {
        SignMode::Shared => s0,
        SignMode::Independent => {
            if rng.coin() {
                1.0
            } else {
                -1.0
            }
        }
    };
    Ok([s0 * mags[0], s1 * mags[1]])
}

fn split(x: f64) -> (i64, f64) {
    let f = x.floor();
    (f as i64, x - f)
}

/// Warps every channel of `z` by the view's latent offset. The timestep tag
/// is kept.
pub fn warp_latent(z: &Latent, view: &ViewTransform) -> Result<Latent> {
    z.ensure_finite("warp_latent input")?;
    let (c, h, w) = z.shape();
    let (i0, fi) = split(view.delta_latent[0]);
    let (j0, fj) = split(view.delta_latent[1]);
    let b = view.boundary;
    let mut out = z.clone();
    for ch in 0..c {
        let src = z.channel(ch).to_vec();
        let dst = out.channel_mut(ch);
        let at = |i: i64, j: i64| src[b.resolve(i, h) * w + b.resolve(j, w)];
        for i in 0..h {
            for j in 0..w {
                let (ii, jj) = (i as i64 + i0, j as i64 + j0);
                let row = |ii: i64| {
                    if fj == 0.0 {
                        at(ii, jj)
                    } else {
                        (1.0 - fj) * at(ii, jj) + fj * at(ii, jj + 1)
                    }
                };
                dst[i * w + j] = if fi == 0.0 {
                    row(ii)
                } else {
                    (1.0 - fi) * row(ii) + fi * row(ii + 1)
                };
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::gaussian_like;
    use crate::rng::derive_stream;
    use proptest::prelude::*;

    fn rand_latent(seed: u64, shape: (usize, usize, usize)) -> Latent {
        gaussian_like(shape, &mut derive_stream(seed, "warp").unwrap()).unwrap().with_tag(7)
    }

    #[test]
    fn two_by_two_row_shift() {
        let z = Latent::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = warp_latent(&z, &ViewTransform::latent([1.0, 0.0], BoundaryMode::EdgeReplicate)).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn pixel_to_latent_offset() {
        let v = ViewTransform::translation([24.0, 24.0], 8, BoundaryMode::EdgeReplicate).unwrap();
        assert_eq!(v.delta_latent, [3.0, 3.0]);
    }

    #[test]
    fn reflect_indices() {
        let r: Vec<usize> = (-3..7).map(|i| BoundaryMode::Reflect.resolve(i, 4)).collect();
        assert_eq!(r, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn half_cell_is_average() {
        let z = Latent::new(1, 1, 3, vec![0.0, 2.0, 4.0]).unwrap();
        let out = warp_latent(&z, &ViewTransform::latent([0.0, 0.5], BoundaryMode::EdgeReplicate)).unwrap();
        assert_eq!(out.data(), &[1.0, 3.0, 4.0]);
    }

    #[test]
    fn shared_sign_is_diagonal() {
        let mut rng = derive_stream(3, "v").unwrap();
        for _ in 0..200 {
            let d = sample_translation(&TranslationRange::default(), SignMode::Shared, &mut rng).unwrap();
            assert_eq!(d[0].signum(), d[1].signum());
            assert!(d.iter().all(|v| (24.0..=32.0).contains(&v.abs())));
        }
    }

    #[test]
    fn zero_range_rejected() {
        let r = TranslationRange { min_px: 0.0, max_px: 4.0 };
        assert!(r.validate().is_err());
    }

    proptest! {
        #[test]
        fn identity(seed in 0u64..500, mode in 0usize..3) {
            let b = [BoundaryMode::EdgeReplicate, BoundaryMode::Reflect, BoundaryMode::Wrap][mode];
            let z = rand_latent(seed, (2, 5, 7));
            let out = warp_latent(&z, &ViewTransform::latent([0.0, 0.0], b)).unwrap();
            prop_assert_eq!(out.data(), z.data());
            prop_assert_eq!(out.timestep_tag, Some(7));
        }

        #[test]
        fn wrap_integer_shift_is_permutation(seed in 0u64..500, di in -9i64..9, dj in -9i64..9) {
            let z = rand_latent(seed, (2, 5, 6));
            let out = warp_latent(&z, &ViewTransform::latent([di as f64, dj as f64], BoundaryMode::Wrap)).unwrap();
            let mut a = z.data().to_vec();
            let mut b = out.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn wrap_shifts_compose(seed in 0u64..500, a in (-6i64..6, -6i64..6), b in (-6i64..6, -6i64..6)) {
            let z = rand_latent(seed, (1, 4, 5));
            let va = ViewTransform::latent([a.0 as f64, a.1 as f64], BoundaryMode::Wrap);
            let vb = ViewTransform::latent([b.0 as f64, b.1 as f64], BoundaryMode::Wrap);
            let vab = ViewTransform::latent([(a.0 + b.0) as f64, (a.1 + b.1) as f64], BoundaryMode::Wrap);
            let twice = warp_latent(&warp_latent(&z, &va).unwrap(), &vb).unwrap();
            let once = warp_latent(&z, &vab).unwrap();
            prop_assert_eq!(twice.data(), once.data());
        }
    }
}
