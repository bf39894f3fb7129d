//! Refits the tiny backend and rewrites `assets/tiny_backend.json`.

use std::path::PathBuf;

use raven_core::diffusion::tiny::train::{fit, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TrainConfig::default();
    let weights = fit(&cfg)?;
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/tiny_backend.json");
    std::fs::write(&out, serde_json::to_string(&weights)?)?;
    for (t, tw) in weights.timesteps.iter().enumerate().step_by(7) {
        println!("t={:2} temperature={}", t + 1, tw.temperature);
    }
    println!("wrote {}", out.display());
    Ok(())
}
