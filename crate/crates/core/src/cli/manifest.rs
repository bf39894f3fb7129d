//! Run manifests: what produced a directory, and what it contains.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::buffer::hex_digest;
use crate::diffusion::{Backend, NoisingMode};
use crate::error::{Error, Result};
use crate::rng::RNG_ALGORITHM;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_hash: String,
    /// The full validated configuration; enough to re-run the stage.
    pub config: RunConfig,
    pub backend_fingerprint: Option<String>,
    pub schedule_hash: Option<String>,
    pub noising_mode: NoisingMode,
    pub root_seed: u64,
    pub code_version: String,
    pub rng_algorithm: String,
    /// Relative path -> SHA-256 of every file in the directory except this one.
    pub files: BTreeMap<String, String>,
    /// Seconds spent per image id. Not part of any reproducibility comparison.
    pub wall_clock_s: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(stage: &str, config: &RunConfig, backend: Option<&Backend>) -> Result<Self> {
        Ok(Self {
            stage: stage.to_owned(),
            config_hash: hex_digest(config.canonical_json()?.as_bytes()),
            config: config.clone(),
            backend_fingerprint: backend.map(Backend::fingerprint),
            schedule_hash: backend.map(|b| b.schedule.hash()),
            noising_mode: config.backend.noising_mode,
            root_seed: config.seed,
            code_version: env!("CARGO_PKG_VERSION").to_owned(),
            rng_algorithm: RNG_ALGORITHM.to_owned(),
            files: BTreeMap::new(),
            wall_clock_s: BTreeMap::new(),
        })
    }

    /// Inventories `dir` and writes the manifest into it.
    pub fn write(mut self, dir: &Path) -> Result<Self> {
        self.files = inventory(dir)?;
        let text = serde_json::to_string_pretty(&self)?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
        Ok(self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let rel = p.strip_prefix(root).expect("walk stays under root");
            let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(rel, hex_digest(&bytes));
        }
    }
    Ok(())
}

/// SHA-256 of every file under `dir`, keyed by `/`-separated relative path.
/// Nested manifests are skipped.
pub fn inventory(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}
