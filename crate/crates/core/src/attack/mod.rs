//! The view-shift attack: partial noising, latent translation, dual-path
//! denoising with view-guided attention, decoding and CIELAB transfer.

pub mod routing;
pub mod transfer;
pub mod view;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use routing::{dual_path_sample, view_attention, CaptureRouter, ReferenceBank, ViewGuidedRouter};
pub use transfer::{align_luminance, color_transfer, contrast_transfer, mean_std, Transferred};
pub use view::{sample_translation, warp_latent, BoundaryMode, SignMode, TranslationRange, ViewKind, ViewTransform};

use crate::buffer::ImageBuffer;
use crate::diffusion::ddim::sampling_timesteps;
use crate::diffusion::{ddim_invert, forward_noise, Backend, NoisingMode, RouterMode};
use crate::error::{Error, Result};
use crate::rng::{derive_stream, RNG_ALGORITHM};

fn default_strength() -> f64 {
    0.15
}
fn default_steps() -> usize {
    50
}
fn default_guidance() -> f64 {
    2.5
}
fn yes() -> bool {
    true
}
fn default_router() -> RouterMode {
    RouterMode::ViewGuided
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RavenConfig {
    #[serde(default = "default_strength")]
    pub strength: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_guidance")]
    pub guidance: f64,
    #[serde(default)]
    pub translation: TranslationRange,
    #[serde(default)]
    pub sign_mode: SignMode,
    #[serde(default)]
    pub noising_mode: NoisingMode,
    #[serde(default)]
    pub boundary: BoundaryMode,
    #[serde(default = "yes")]
    pub color_transfer: bool,
    #[serde(default = "yes")]
    pub contrast_transfer: bool,
    #[serde(default = "default_router")]
    pub router: RouterMode,
    #[serde(default)]
    pub seed: u64,
    /// Pixel translation to use instead of sampling one.
    #[serde(default)]
    pub forced_delta_px: Option<[f64; 2]>,
}

impl Default for RavenConfig {
    fn default() -> Self {
        Self {
            strength: default_strength(),
            steps: default_steps(),
            guidance: default_guidance(),
            translation: TranslationRange::default(),
            sign_mode: SignMode::default(),
            noising_mode: NoisingMode::default(),
            boundary: BoundaryMode::default(),
            color_transfer: true,
            contrast_transfer: true,
            router: RouterMode::ViewGuided,
            seed: 0,
            forced_delta_px: None,
        }
    }
}

impl RavenConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.strength) {
            errs.push(format!("strength must be in [0, 1], got {}", self.strength));
        }
        if self.steps == 0 {
            errs.push("steps must be at least 1".to_owned());
        }
        if !(self.guidance.is_finite() && self.guidance >= 0.0) {
            errs.push(format!("guidance must be finite and non-negative, got {}", self.guidance));
        }
        if let Err(e) = self.translation.validate() {
            errs.push(e.to_string());
        }
        if let Some(d) = self.forced_delta_px {
            if !d.iter().all(|v| v.is_finite()) {
                errs.push(format!("forced_delta_px must be finite, got {d:?}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Everything needed to audit one attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub image_id: String,
    pub backend_fingerprint: String,
    pub schedule_hash: String,
    pub rng_algorithm: String,
    pub root_seed: u64,
    pub stream_keys: Vec<String>,
    pub strength: f64,
    pub tau: usize,
    pub steps: usize,
    pub guidance: f64,
    pub trajectory: Vec<usize>,
    pub noising_mode: NoisingMode,
    pub router: RouterMode,
    pub view: ViewTransform,
    pub color_transfer: bool,
    pub contrast_transfer: bool,
    pub clipped_fraction: BTreeMap<String, f64>,
    pub stage_hashes: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl AttackTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Attacks one watermarked image. Deterministic in `(cfg.seed, x_w.source_id, cfg)`.
pub fn run_raven(x_w: &ImageBuffer, cfg: &RavenConfig, backend: &Backend) -> Result<(ImageBuffer, AttackTrace)> {
    cfg.validate()?;
    if cfg.steps > backend.schedule.len() {
        return Err(Error::Config(vec![format!(
            "steps {} exceeds schedule length {}",
            cfg.steps,
            backend.schedule.len()
        )]));
    }
    backend.autoencoder.check_image_dims(x_w)?;
    let id = x_w.source_id.clone();
    let noise_key = format!("image:{id}:stage:noise");
    let view_key = format!("image:{id}:stage:view");
    let mut hashes = BTreeMap::new();
    let mut clipped = BTreeMap::new();
    let mut warnings = Vec::new();
    hashes.insert("input".to_owned(), x_w.content_hash());

    let null = backend.null_conditioning();
    let z0 = backend.encode(x_w)?;
    z0.ensure_finite("encode")?;
    hashes.insert("z0".to_owned(), z0.content_hash());

    let schedule = &backend.schedule;
    let tau = schedule.strength_to_timestep(cfg.strength)?;
    let z_tau = match cfg.noising_mode {
        NoisingMode::Stochastic => forward_noise(&z0, cfg.strength, schedule, &mut derive_stream(cfg.seed, &noise_key)?)?.0,
        NoisingMode::DdimInversion => ddim_invert(backend, &z0, cfg.steps, &null, cfg.guidance, Some(tau))?,
    };
    z_tau.ensure_finite("partial noising")?;
    hashes.insert("z_tau".to_owned(), z_tau.content_hash());

    let delta_px = match cfg.forced_delta_px {
        Some(d) => d,
        None => sample_translation(&cfg.translation, cfg.sign_mode, &mut derive_stream(cfg.seed, &view_key)?)?,
    };
    let view = ViewTransform::translation(delta_px, backend.factor(), cfg.boundary)?;
    let z_warp = warp_latent(&z_tau, &view)?;
    hashes.insert("z_warped".to_owned(), z_warp.content_hash());

    let (z_ref, z_att) = dual_path_sample(backend, &z_tau, &z_warp, cfg.steps, &null, cfg.guidance, cfg.router)?;
    hashes.insert("z_reference_0".to_owned(), z_ref.content_hash());
    hashes.insert("z_attack_0".to_owned(), z_att.content_hash());

    let mut x = backend.decode(&z_att, &id)?;
    hashes.insert("x_opt".to_owned(), x.content_hash());
    if cfg.color_transfer {
        let t = color_transfer(&x, x_w)?;
        clipped.insert("color_transfer".to_owned(), t.clipped_fraction);
        x = t.image;
        hashes.insert("x_color".to_owned(), x.content_hash());
    }
    if cfg.contrast_transfer {
        let t = contrast_transfer(&x, x_w)?;
        clipped.insert("contrast_transfer".to_owned(), t.clipped_fraction);
        warnings.extend(t.warning);
        x = t.image;
        hashes.insert("x_contrast".to_owned(), x.content_hash());
    }
    let x = x.with_source_id(id.clone());
    hashes.insert("output".to_owned(), x.content_hash());

    let trace = AttackTrace {
        image_id: id,
        backend_fingerprint: backend.fingerprint(),
        schedule_hash: schedule.hash(),
        rng_algorithm: RNG_ALGORITHM.to_owned(),
        root_seed: cfg.seed,
        stream_keys: vec![noise_key, view_key],
        strength: cfg.strength,
        tau,
        steps: cfg.steps,
        guidance: cfg.guidance,
        trajectory: sampling_timesteps(schedule, cfg.steps, tau)?,
        noising_mode: cfg.noising_mode,
        router: cfg.router,
        view,
        color_transfer: cfg.color_transfer,
        contrast_transfer: cfg.contrast_transfer,
        clipped_fraction: clipped,
        stage_hashes: hashes,
        warnings,
    };
    Ok((x, trace))
}

/// [`run_raven`] over many images in parallel; output order follows input.
pub fn run_raven_batch(
    images: &[ImageBuffer],
    cfg: &RavenConfig,
    backend: &Backend,
) -> Vec<Result<(ImageBuffer, AttackTrace)>> {
    images.par_iter().map(|x| run_raven(x, cfg, backend)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_from_empty_toml() {
        let cfg: RavenConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RavenConfig::default());
        assert_eq!(cfg.strength, 0.15);
        assert_eq!(cfg.steps, 50);
        assert_eq!(cfg.guidance, 2.5);
        assert_eq!(cfg.translation, TranslationRange { min_px: 24.0, max_px: 32.0 });
    }

    #[test]
    fn config_errors_collected() {
        let cfg = RavenConfig {
            strength: 1.5,
            steps: 0,
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::Config(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(toml::from_str::<RavenConfig>("strenght = 0.2").is_err());
    }
}
