//! Executable adapter for externally implemented schemes.
//!
//! `<command> [args..] embed --in in.png --key key.json --out out.png`
//! `<command> [args..] detect --in in.png --key key.json` printing
//! `{"statistic": f, "decoded": [0, 1, ...] | null}` on stdout.

use std::path::Path;
use std::process::Command;

use serde::Deserialize;

use super::WatermarkKey;
use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct ExternalScheme {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// Scheme-specific key material, passed through untouched.
    #[serde(default)]
    pub key: serde_json::Value,
}

#[derive(Deserialize)]
struct DetectReply {
    statistic: f64,
    #[serde(default)]
    decoded: Option<Vec<u8>>,
}

fn run(ext: &ExternalScheme, extra: &[&str]) -> Result<String> {
    let out = Command::new(&ext.command)
        .args(&ext.args)
        .args(extra)
        .output()
        .map_err(|e| Error::Adapter {
            command: ext.command.clone(),
            message: e.to_string(),
        })?;
    if !out.status.success() {
        return Err(Error::Adapter {
            command: ext.command.clone(),
            message: format!("{}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()),
        });
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn stage(dir: &Path, x: &ImageBuffer, key: &WatermarkKey) -> Result<(String, String)> {
    let img = dir.join("in.png");
    let key_path = dir.join("key.json");
    x.save_png(&img)?;
    std::fs::write(&key_path, key.to_json()?).map_err(|e| Error::io(&key_path, e))?;
    Ok((img.display().to_string(), key_path.display().to_string()))
}

fn scratch() -> Result<tempfile::TempDir> {
    tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))
}

pub fn embed_external(x: &ImageBuffer, ext: &ExternalScheme, key: &WatermarkKey) -> Result<ImageBuffer> {
    let dir = scratch()?;
    let (img, key_path) = stage(dir.path(), x, key)?;
    let out = dir.path().join("out.png");
    run(ext, &["embed", "--in", &img, "--key", &key_path, "--out", &out.display().to_string()])?;
    let marked = ImageBuffer::load_png(&out)?;
    x.same_dims(&marked)?;
    Ok(marked.with_source_id(x.source_id.clone()))
}

pub fn detect_external(x: &ImageBuffer, ext: &ExternalScheme, key: &WatermarkKey) -> Result<(f64, Option<Vec<bool>>)> {
    let dir = scratch()?;
    let (img, key_path) = stage(dir.path(), x, key)?;
    let stdout = run(ext, &["detect", "--in", &img, "--key", &key_path])?;
    let reply: DetectReply = serde_json::from_str(stdout.trim()).map_err(|e| Error::Adapter {
        command: ext.command.clone(),
        message: format!("unparseable detect output: {e}"),
    })?;
    if !reply.statistic.is_finite() {
        return Err(Error::Adapter {
            command: ext.command.clone(),
            message: "non-finite statistic".into(),
        });
    }
    Ok((reply.statistic, reply.decoded.map(|d| d.into_iter().map(|b| b != 0).collect())))
}
