//! Comparison attacks: signal processing, crops, diffusion regeneration and
//! external executables.

pub mod signal;

use std::process::Command;

use serde::{Deserialize, Serialize};

pub use signal::{brightness, center_crop, contrast, gaussian_blur, gaussian_noise, jpeg, random_crop};

use crate::attack::{run_raven, AttackTrace, RavenConfig};
use crate::buffer::ImageBuffer;
use crate::diffusion::{ddim_sample, forward_noise, Backend};
use crate::error::{Error, Result};
use crate::rng::{derive_stream, RngStream};

fn half() -> f64 {
    0.5
}
fn q25() -> u8 {
    25
}
fn one() -> f64 {
    1.0
}
fn noise_sigma() -> f64 {
    0.05
}
fn crop_ratio() -> f64 {
    0.75
}
fn regen_strength() -> f64 {
    0.15
}
fn steps50() -> usize {
    50
}
fn two() -> usize {
    2
}

/// An attack and its parameters. Missing parameters take the usual defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackKind {
    Brightness {
        #[serde(default = "half")]
        factor: f64,
    },
    Contrast {
        #[serde(default = "half")]
        factor: f64,
    },
    Jpeg {
        #[serde(default = "q25")]
        quality: u8,
    },
    GaussianBlur {
        #[serde(default = "one")]
        sigma: f64,
    },
    GaussianNoise {
        #[serde(default = "noise_sigma")]
        sigma: f64,
    },
    CenterCrop {
        #[serde(default = "crop_ratio")]
        ratio: f64,
    },
    RandomCrop {
        #[serde(default = "crop_ratio")]
        ratio: f64,
    },
    Regen {
        #[serde(default = "regen_strength")]
        strength: f64,
        #[serde(default = "steps50")]
        steps: usize,
    },
    Rinse {
        #[serde(default = "regen_strength")]
        strength: f64,
        #[serde(default = "two")]
        passes: usize,
        #[serde(default = "steps50")]
        steps: usize,
    },
    /// The view-shift attack; unset fields come from the run's attack config.
    Raven {
        #[serde(default)]
        strength: Option<f64>,
    },
    External {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Brightness { .. } => "brightness",
            AttackKind::Contrast { .. } => "contrast",
            AttackKind::Jpeg { .. } => "jpeg",
            AttackKind::GaussianBlur { .. } => "gaussian_blur",
            AttackKind::GaussianNoise { .. } => "gaussian_noise",
            AttackKind::CenterCrop { .. } => "center_crop",
            AttackKind::RandomCrop { .. } => "random_crop",
            AttackKind::Regen { .. } => "regen",
            AttackKind::Rinse { .. } => "rinse",
            AttackKind::Raven { .. } => "raven",
            AttackKind::External { .. } => "external",
        }
    }

    pub fn needs_backend(&self) -> bool {
        matches!(self, AttackKind::Regen { .. } | AttackKind::Rinse { .. } | AttackKind::Raven { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    #[serde(flatten)]
    pub kind: AttackKind,
    /// Suffix of the attack's RNG stream; defaults to the attack name.
    #[serde(default)]
    pub seed_key: Option<String>,
    /// Display label; defaults to the attack name.
    #[serde(default)]
    pub label: Option<String>,
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            seed_key: None,
            label: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.name().to_owned())
    }

    /// Per-image stream for this attack.
    pub fn stream(&self, root_seed: u64, image_id: &str) -> Result<RngStream> {
        let key = self.seed_key.clone().unwrap_or_else(|| self.label());
        derive_stream(root_seed, &format!("image:{image_id}:attack:{key}"))
    }
}

/// Encode, noise to `strength`, DDIM-sample with plain attention, decode.
pub fn regen(x: &ImageBuffer, strength: f64, steps: usize, backend: &Backend, rng: &mut RngStream) -> Result<ImageBuffer> {
    backend.autoencoder.check_image_dims(x)?;
    let z = backend.encode(x)?;
    let (z_tau, _) = forward_noise(&z, strength, &backend.schedule, rng)?;
    let z0 = ddim_sample(backend, &z_tau, steps.min(backend.schedule.len()), &backend.null_conditioning(), 1.0, None)?;
    backend.decode(&z0, &x.source_id)
}

/// `passes` rounds of [`regen`]; round `i > 0` draws from the child stream `pass:i`.
pub fn rinse(
    x: &ImageBuffer,
    strength: f64,
    passes: usize,
    steps: usize,
    backend: &Backend,
    rng: &mut RngStream,
) -> Result<ImageBuffer> {
    if passes == 0 {
        return Err(Error::invalid("rinse needs at least one pass"));
    }
    let mut out = regen(x, strength, steps, backend, rng)?;
    for i in 1..passes {
        out = regen(&out, strength, steps, backend, &mut rng.child(&format!("pass:{i}")))?;
    }
    Ok(out)
}

/// `<command> [args..] attack --in in.png --out out.png --seed N`.
pub fn external_attack(x: &ImageBuffer, command: &str, args: &[String], seed: u64) -> Result<ImageBuffer> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let (input, output) = (dir.path().join("in.png"), dir.path().join("out.png"));
    x.save_png(&input)?;
    let status = Command::new(command)
        .args(args)
        .arg("attack")
        .arg("--in")
        .arg(&input)
        .arg("--out")
        .arg(&output)
        .arg("--seed")
        .arg(seed.to_string())
        .output()
        .map_err(|e| Error::Adapter {
            command: command.to_owned(),
            message: e.to_string(),
        })?;
    if !status.status.success() {
        return Err(Error::Adapter {
            command: command.to_owned(),
            message: format!("{}: {}", status.status, String::from_utf8_lossy(&status.stderr).trim()),
        });
    }
    let y = ImageBuffer::load_png(&output)?;
    x.same_dims(&y)?;
    Ok(y.with_source_id(x.source_id.clone()))
}

/// Applies `spec` to `x`. Diffusion attacks need `backend`; `raven` takes its
/// remaining settings from `raven_cfg`.
pub fn apply_attack(
    x: &ImageBuffer,
    spec: &AttackSpec,
    root_seed: u64,
    backend: Option<&Backend>,
    raven_cfg: &RavenConfig,
) -> Result<ImageBuffer> {
    apply_attack_traced(x, spec, root_seed, backend, raven_cfg).map(|(y, _)| y)
}

/// [`apply_attack`], also returning the trace when the attack is `raven`.
pub fn apply_attack_traced(
    x: &ImageBuffer,
    spec: &AttackSpec,
    root_seed: u64,
    backend: Option<&Backend>,
    raven_cfg: &RavenConfig,
) -> Result<(ImageBuffer, Option<AttackTrace>)> {
    let mut trace = None;
    let mut rng = spec.stream(root_seed, &x.source_id)?;
    let need = || backend.ok_or_else(|| Error::Backend(format!("attack `{}` needs a diffusion backend", spec.kind.name())));
    let out = match &spec.kind {
        AttackKind::Brightness { factor } => brightness(x, *factor)?,
        AttackKind::Contrast { factor } => contrast(x, *factor)?,
        AttackKind::Jpeg { quality } => jpeg(x, *quality)?,
        AttackKind::GaussianBlur { sigma } => gaussian_blur(x, *sigma)?,
        AttackKind::GaussianNoise { sigma } => gaussian_noise(x, *sigma, &mut rng)?,
        AttackKind::CenterCrop { ratio } => center_crop(x, *ratio)?,
        AttackKind::RandomCrop { ratio } => random_crop(x, *ratio, &mut rng)?,
        AttackKind::Regen { strength, steps } => regen(x, *strength, *steps, need()?, &mut rng)?,
        AttackKind::Rinse { strength, passes, steps } => rinse(x, *strength, *passes, *steps, need()?, &mut rng)?,
        AttackKind::Raven { strength } => {
            let mut cfg = raven_cfg.clone();
            if let Some(s) = strength {
                cfg.strength = *s;
            }
            cfg.seed = root_seed;
            let (y, t) = run_raven(x, &cfg, need()?)?;
            trace = Some(t);
            y
        }
        AttackKind::External { command, args } => external_attack(x, command, args, rng.next_u64())?,
    };
    Ok((out.with_source_id(x.source_id.clone()), trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parses_with_defaults() {
        let s: AttackSpec = toml::from_str("name = \"jpeg\"").unwrap();
        assert_eq!(s.kind, AttackKind::Jpeg { quality: 25 });
        let s: AttackSpec = toml::from_str("name = \"rinse\"\npasses = 4").unwrap();
        assert_eq!(
            s.kind,
            AttackKind::Rinse {
                strength: 0.15,
                passes: 4,
                steps: 50
            }
        );
        assert!(toml::from_str::<AttackSpec>("name = \"sharpen\"").is_err());
    }

    #[test]
    fn signal_attacks_need_no_backend() {
        let x = ImageBuffer::filled(16, 16, [0.3, 0.4, 0.5], "a").unwrap();
        let spec = AttackSpec::new(AttackKind::GaussianNoise { sigma: 0.1 });
        let a = apply_attack(&x, &spec, 3, None, &RavenConfig::default()).unwrap();
        let b = apply_attack(&x, &spec, 3, None, &RavenConfig::default()).unwrap();
        assert_eq!(a, b);
        let regen = AttackSpec::new(AttackKind::Regen { strength: 0.15, steps: 50 });
        assert!(matches!(
            apply_attack(&x, &regen, 3, None, &RavenConfig::default()),
            Err(Error::Backend(_))
        ));
    }
}
