//! Frozen latent diffusion backend: autoencoder, denoiser, schedule and DDIM.

pub mod attention;
pub mod ddim;
pub mod schedule;
pub mod tiny;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

pub use attention::{AttentionRouter, AttentionSite, AttnProjections, Branch, RouterMode, SiteId, StandardRouter, Tokens};
pub use ddim::{ddim_invert, ddim_sample, forward_noise, NoisingMode};
pub use schedule::NoiseSchedule;

use crate::buffer::{ImageBuffer, Latent};
use crate::error::{Error, Result};

/// Environment variable naming the directory that holds pretrained weights.
pub const WEIGHTS_DIR_ENV: &str = "RAVEN_WEIGHTS_DIR";

/// Conditioning embedding handed to the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning(pub Vec<f64>);

pub trait Autoencoder: Send + Sync {
    fn downsampling_factor(&self) -> usize;

    fn latent_channels(&self) -> usize;

    fn encode(&self, x: &ImageBuffer) -> Result<Latent>;

    /// Decodes and clips into `[0, 1]`.
    fn decode(&self, z: &Latent, source_id: &str) -> Result<ImageBuffer>;

    /// Images entering the pipeline must be at least 8 px and divisible by the
    /// downsampling factor; nothing is resized implicitly.
    fn check_image_dims(&self, x: &ImageBuffer) -> Result<()> {
        let f = self.downsampling_factor();
        let (h, w) = x.dims();
        if h < 8 || w < 8 || h % f != 0 || w % f != 0 {
            return Err(Error::dim(format!(
                "image {h}x{w} must be at least 8x8 and divisible by the backend factor {f}"
            )));
        }
        Ok(())
    }
}

/// A frozen noise predictor.
pub trait Denoiser: Send + Sync {
    /// Predicts the noise in `z` at timestep `t`, calling `router` at every
    /// self-attention site (plain self-attention when `None`).
    fn predict(
        &self,
        z: &Latent,
        t: usize,
        cond: &Conditioning,
        branch: Branch,
        router: Option<&mut dyn AttentionRouter>,
    ) -> Result<Latent>;

    fn fingerprint(&self) -> String;

    /// Empty-prompt conditioning.
    fn null_conditioning(&self) -> Conditioning;

    fn attention_sites(&self) -> Vec<SiteId>;
}

/// Loaded handles plus schedule. Cheap to clone and shareable across threads.
#[derive(Clone)]
pub struct Backend {
    pub name: String,
    pub autoencoder: Arc<dyn Autoencoder>,
    pub denoiser: Arc<dyn Denoiser>,
    pub schedule: NoiseSchedule,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("name", &self.name)
            .field("fingerprint", &self.denoiser.fingerprint())
            .field("timesteps", &self.schedule.len())
            .finish()
    }
}

impl Backend {
    pub fn factor(&self) -> usize {
        self.autoencoder.downsampling_factor()
    }

    pub fn fingerprint(&self) -> String {
        self.denoiser.fingerprint()
    }

    pub fn null_conditioning(&self) -> Conditioning {
        self.denoiser.null_conditioning()
    }

    pub fn encode(&self, x: &ImageBuffer) -> Result<Latent> {
        self.autoencoder.encode(x)
    }

    pub fn decode(&self, z: &Latent, source_id: &str) -> Result<ImageBuffer> {
        self.autoencoder.decode(z, source_id)
    }

    /// Latent shape for an image of the given size.
    pub fn latent_shape(&self, height: usize, width: usize) -> (usize, usize, usize) {
        let f = self.factor();
        (self.autoencoder.latent_channels(), height / f, width / f)
    }
}

fn default_steps() -> usize {
    50
}

fn default_guidance() -> f64 {
    2.5
}

/// Backend section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_guidance")]
    pub guidance: f64,
    #[serde(default)]
    pub noising_mode: NoisingMode,
}

impl BackendSpec {
    pub fn tiny() -> Self {
        Self {
            name: "tiny".into(),
            weights_path: None,
            steps: default_steps(),
            guidance: default_guidance(),
            noising_mode: NoisingMode::Stochastic,
        }
    }
}

/// Constructor for a pretrained backend given a resolved weights location.
pub type AdapterFactory = fn(&BackendSpec, &Path) -> Result<Backend>;

fn adapters() -> &'static RwLock<HashMap<String, AdapterFactory>> {
    static REG: OnceLock<RwLock<HashMap<String, AdapterFactory>>> = OnceLock::new();
    REG.get_or_init(Default::default)
}

/// Registers a pretrained-model adapter under `name`.
pub fn register_adapter(name: &str, factory: AdapterFactory) {
    adapters().write().expect("adapter registry poisoned").insert(name.to_owned(), factory);
}

/// Where a pretrained backend's weights are expected.
pub fn resolve_weights_path(spec: &BackendSpec) -> PathBuf {
    spec.weights_path.clone().unwrap_or_else(|| {
        std::env::var_os(WEIGHTS_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("weights"))
            .join(&spec.name)
    })
}

/// Loads the backend named by `spec`: `tiny` is built in; any other name must
/// have weights on disk and a registered adapter.
pub fn load_backend(spec: &BackendSpec) -> Result<Backend> {
    if spec.steps == 0 {
        return Err(Error::invalid("backend steps must be at least 1"));
    }
    let backend = if spec.name == "tiny" {
        tiny::load()?
    } else {
        let factory = adapters()
            .read()
            .expect("adapter registry poisoned")
            .get(&spec.name)
            .copied();
        let path = resolve_weights_path(spec);
        let Some(factory) = factory else {
            return Err(Error::Backend(format!(
                "unknown backend `{}` (built in: tiny; no adapter registered under that name)",
                spec.name
            )));
        };
        if !path.exists() {
            return Err(Error::MissingWeights {
                name: spec.name.clone(),
                path,
            });
        }
        factory(spec, &path)?
    };
    if spec.steps > backend.schedule.len() {
        return Err(Error::Backend(format!(
            "{} DDIM steps requested but backend `{}` has {} timesteps",
            spec.steps,
            spec.name,
            backend.schedule.len()
        )));
    }
    Ok(backend)
}
