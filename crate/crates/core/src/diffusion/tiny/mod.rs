//! Self-contained tiny latent diffusion backend.
//!
//! * Autoencoder: downsampling factor 4, four latent channels. The encoder is
//!   a stride-4 patch projection onto the leading principal components of
//!   toy-domain patches (unit variance per channel). The decoder rebuilds each
//!   4x4 patch from the 3x3 latent neighbourhood; its in-span part is the exact
//!   left inverse of the encoder, so `encode(decode(z)) == z` up to clipping.
//! * Denoiser: per-timestep clean-latent readout over the 3x3 neighbourhood
//!   features plus one self-attention site (`mid.0`) whose queries and keys
//!   are a PCA projection of the neighbourhood and whose values are the centre
//!   latent. The noise estimate is derived from the clean-latent estimate.
//! * Schedule: `T = 50`, betas linear in `[0.01, 0.2]`.
//!
//! Weights are fitted in closed form by [`train::fit`] and shipped in
//! `assets/tiny_backend.json`.

pub mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::attention::{self_attention, AttentionRouter, AttentionSite, AttnProjections, Branch, Matrix, SiteId, Tokens};
use super::schedule::NoiseSchedule;
use super::{Autoencoder, Backend, Conditioning, Denoiser};
use crate::buffer::{hex_digest, ImageBuffer, Latent};
use crate::error::{Error, Result};

pub const FACTOR: usize = 4;
pub const PATCH_DIM: usize = FACTOR * FACTOR * 3;
pub const NEIGHBOURS: usize = 9;

const WEIGHTS_JSON: &str = include_str!("../../../assets/tiny_backend.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimestepWeights {
    /// Query temperature of the attention site.
    pub temperature: f64,
    /// `channels x (9*channels + channels + 1)` clean-latent readout.
    pub readout: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinyWeights {
    pub version: u32,
    pub latent_channels: usize,
    pub head_dim: usize,
    pub patch_mean: Vec<f64>,
    /// `channels x PATCH_DIM`.
    pub encoder: Vec<f64>,
    /// `NEIGHBOURS x PATCH_DIM x channels`.
    pub decoder: Vec<f64>,
    /// `head_dim x (NEIGHBOURS * channels)`.
    pub attn_proj: Vec<f64>,
    pub schedule: ScheduleParams,
    pub timesteps: Vec<TimestepWeights>,
}

impl TinyWeights {
    pub fn feature_dim(&self) -> usize {
        NEIGHBOURS * self.latent_channels
    }

    pub fn readout_dim(&self) -> usize {
        self.feature_dim() + self.latent_channels + 1
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.latent_channels;
        let checks = [
            ("patch_mean", self.patch_mean.len(), PATCH_DIM),
            ("encoder", self.encoder.len(), c * PATCH_DIM),
            ("decoder", self.decoder.len(), NEIGHBOURS * PATCH_DIM * c),
            ("attn_proj", self.attn_proj.len(), self.head_dim * self.feature_dim()),
            ("timesteps", self.timesteps.len(), self.schedule.steps),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Backend(format!("tiny weights: `{name}` has {got} entries, expected {want}")));
            }
        }
        for (t, tw) in self.timesteps.iter().enumerate() {
            if tw.readout.len() != c * self.readout_dim() {
                return Err(Error::Backend(format!("tiny weights: readout at t={} malformed", t + 1)));
            }
        }
        let all_finite = self
            .patch_mean
            .iter()
            .chain(&self.encoder)
            .chain(&self.decoder)
            .chain(&self.attn_proj)
            .chain(self.timesteps.iter().flat_map(|t| t.readout.iter()))
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Backend("tiny weights contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear_beta(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end)
    }
}

/// Shipped weights.
pub fn bundled_weights() -> Result<TinyWeights> {
    serde_json::from_str(WEIGHTS_JSON).map_err(|e| Error::Backend(format!("bundled tiny weights: {e}")))
}

pub fn bundled_weights_json() -> &'static str {
    WEIGHTS_JSON
}

/// Edge-replicated 3x3 neighbourhood features, one token per latent cell.
/// Feature order: channel-major, then row offset, then column offset.
pub fn neighbourhoods(z: &Latent) -> Tokens {
    let (c, h, w) = z.shape();
    let dim = c * NEIGHBOURS;
    let mut data = vec![0.0; h * w * dim];
    for i in 0..h {
        for j in 0..w {
            let row = &mut data[(i * w + j) * dim..(i * w + j + 1) * dim];
            let mut k = 0;
            for ch in 0..c {
                for di in -1i64..=1 {
                    let ii = (i as i64 + di).clamp(0, h as i64 - 1) as usize;
                    for dj in -1i64..=1 {
                        let jj = (j as i64 + dj).clamp(0, w as i64 - 1) as usize;
                        row[k] = z.get(ch, ii, jj);
                        k += 1;
                    }
                }
            }
        }
    }
    Tokens::new(h * w, dim, data).expect("sizes agree")
}

/// Row `c` selects the centre value of channel `c`.
pub(crate) fn centre_selector(channels: usize) -> Matrix {
    let dim = channels * NEIGHBOURS;
    let mut data = vec![0.0; channels * dim];
    for c in 0..channels {
        data[c * dim + c * NEIGHBOURS + 4] = 1.0;
    }
    Matrix::new(channels, dim, data).expect("sizes agree")
}

pub(crate) fn site_projections(w: &TinyWeights, temperature: f64) -> AttnProjections {
    let p = Matrix::new(w.head_dim, w.feature_dim(), w.attn_proj.clone()).expect("validated");
    AttnProjections {
        w_q: p.scaled(temperature),
        w_k: p,
        w_v: centre_selector(w.latent_channels),
    }
}

/// Extracts the non-overlapping `FACTOR x FACTOR` patches of an image.
pub(crate) fn patches(x: &ImageBuffer) -> Vec<[f64; PATCH_DIM]> {
    let (h, w) = (x.height() / FACTOR, x.width() / FACTOR);
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let mut p = [0.0; PATCH_DIM];
            for dy in 0..FACTOR {
                for dx in 0..FACTOR {
                    let px = x.pixel(i * FACTOR + dy, j * FACTOR + dx);
                    let base = (dy * FACTOR + dx) * 3;
                    p[base..base + 3].copy_from_slice(&px);
                }
            }
            out.push(p);
        }
    }
    out
}

pub struct TinyAutoencoder {
    weights: Arc<TinyWeights>,
}

impl TinyAutoencoder {
    /// Raw decoder output before clipping, interleaved RGB.
    pub fn decode_raw(&self, z: &Latent) -> Result<Vec<f64>> {
        let w = &self.weights;
        let c = w.latent_channels;
        if z.channels() != c {
            return Err(Error::dim(format!("tiny decoder expects {c} channels, got {}", z.channels())));
        }
        z.ensure_finite("decode input")?;
        let (lh, lw) = (z.height(), z.width());
        let (h, wd) = (lh * FACTOR, lw * FACTOR);
        let mut out = vec![0.0; h * wd * 3];
        let feats = neighbourhoods(z);
        for i in 0..lh {
            for j in 0..lw {
                let f = feats.row(i * lw + j);
                let mut patch = [0.0; PATCH_DIM];
                patch.copy_from_slice(&w.patch_mean);
                // decoder is [k][p][c]; neighbourhood features are [c][k]
                for k in 0..NEIGHBOURS {
                    for (p, pv) in patch.iter_mut().enumerate() {
                        let d = &w.decoder[(k * PATCH_DIM + p) * c..(k * PATCH_DIM + p + 1) * c];
                        for ch in 0..c {
                            *pv += d[ch] * f[ch * NEIGHBOURS + k];
                        }
                    }
                }
                for dy in 0..FACTOR {
                    for dx in 0..FACTOR {
                        let base = (dy * FACTOR + dx) * 3;
                        let o = ((i * FACTOR + dy) * wd + j * FACTOR + dx) * 3;
                        out[o..o + 3].copy_from_slice(&patch[base..base + 3]);
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Autoencoder for TinyAutoencoder {
    fn downsampling_factor(&self) -> usize {
        FACTOR
    }

    fn latent_channels(&self) -> usize {
        self.weights.latent_channels
    }

    fn encode(&self, x: &ImageBuffer) -> Result<Latent> {
        self.check_image_dims(x)?;
        let w = &self.weights;
        let c = w.latent_channels;
        let (lh, lw) = (x.height() / FACTOR, x.width() / FACTOR);
        let mut data = vec![0.0; c * lh * lw];
        for (cell, p) in patches(x).iter().enumerate() {
            for ch in 0..c {
                let e = &w.encoder[ch * PATCH_DIM..(ch + 1) * PATCH_DIM];
                let v: f64 = (0..PATCH_DIM).map(|k| e[k] * (p[k] - w.patch_mean[k])).sum();
                data[ch * lh * lw + cell] = v;
            }
        }
        Latent::new(c, lh, lw, data)
    }

    fn decode(&self, z: &Latent, source_id: &str) -> Result<ImageBuffer> {
        let raw = self.decode_raw(z)?;
        Ok(ImageBuffer::from_unclipped(z.height() * FACTOR, z.width() * FACTOR, raw, source_id)?.0)
    }
}

pub struct TinyDenoiser {
    weights: Arc<TinyWeights>,
    schedule: NoiseSchedule,
    projections: Vec<AttnProjections>,
    site: SiteId,
    fingerprint: String,
}

impl TinyDenoiser {
    /// Clean-latent estimate at timestep `t`.
    pub fn predict_clean(
        &self,
        z: &Latent,
        t: usize,
        cond: &Conditioning,
        branch: Branch,
        router: Option<&mut dyn AttentionRouter>,
    ) -> Result<Latent> {
        let w = &self.weights;
        let c = w.latent_channels;
        if z.channels() != c {
            return Err(Error::dim(format!("tiny denoiser expects {c} channels, got {}", z.channels())));
        }
        if t == 0 || t > self.schedule.len() {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.schedule.len())));
        }
        if cond.0.len() != c {
            return Err(Error::dim(format!("conditioning has {} entries, expected {c}", cond.0.len())));
        }
        let hidden = neighbourhoods(z);
        let proj = &self.projections[t - 1];
        let attn = match router {
            Some(r) => r.route(&AttentionSite {
                id: &self.site,
                timestep: t,
                branch,
                hidden: &hidden,
                proj,
            })?,
            None => self_attention(&hidden, proj)?,
        };
        if attn.len() != hidden.len() || attn.dim() != c {
            return Err(Error::dim(format!(
                "router returned {}x{} at {}, expected {}x{c}",
                attn.len(),
                attn.dim(),
                self.site,
                hidden.len()
            )));
        }
        let readout = &w.timesteps[t - 1].readout;
        let rd = w.readout_dim();
        let fd = w.feature_dim();
        let n = hidden.len();
        let mut out = vec![0.0; c * n];
        for i in 0..n {
            let f = hidden.row(i);
            let a = attn.row(i);
            for ch in 0..c {
                let r = &readout[ch * rd..(ch + 1) * rd];
                let mut v = r[rd - 1] + cond.0[ch];
                v += r[..fd].iter().zip(f).map(|(x, y)| x * y).sum::<f64>();
                v += r[fd..fd + c].iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
                out[ch * n + i] = v;
            }
        }
        Latent::new(c, z.height(), z.width(), out)
    }
}

impl Denoiser for TinyDenoiser {
    fn predict(
        &self,
        z: &Latent,
        t: usize,
        cond: &Conditioning,
        branch: Branch,
        router: Option<&mut dyn AttentionRouter>,
    ) -> Result<Latent> {
        let x0 = self.predict_clean(z, t, cond, branch, router)?;
        let ab = self.schedule.alpha_bar(t);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut eps = z.clone();
        for (e, x) in eps.data_mut().iter_mut().zip(x0.data()) {
            *e = (*e - sa * x) / sb;
        }
        eps.timestep_tag = z.timestep_tag;
        Ok(eps)
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn null_conditioning(&self) -> Conditioning {
        Conditioning(vec![0.0; self.weights.latent_channels])
    }

    fn attention_sites(&self) -> Vec<SiteId> {
        vec![self.site.clone()]
    }
}

/// Builds the tiny backend from explicit weights.
pub fn from_weights(weights: TinyWeights, fingerprint: String) -> Result<Backend> {
    weights.validate()?;
    let schedule = weights.schedule()?;
    let weights = Arc::new(weights);
    let projections = weights
        .timesteps
        .iter()
        .map(|tw| site_projections(&weights, tw.temperature))
        .collect();
    let denoiser = TinyDenoiser {
        weights: weights.clone(),
        schedule: schedule.clone(),
        projections,
        site: SiteId::new("mid", 0),
        fingerprint,
    };
    Ok(Backend {
        name: "tiny".into(),
        autoencoder: Arc::new(TinyAutoencoder { weights }),
        denoiser: Arc::new(denoiser),
        schedule,
    })
}

/// The bundled tiny backend.
pub fn load() -> Result<Backend> {
    let fp = format!("tiny-{}", &hex_digest(WEIGHTS_JSON.as_bytes())[..16]);
    from_weights(bundled_weights()?, fp)
}
