//! Keyed deterministic random streams.
//!
//! A stream is a ChaCha20 keystream whose 256-bit key is
//! `SHA-256(root_seed as little-endian u64 || stream_key as UTF-8)`.
//! ChaCha20 is counter based, so a stream's draws depend only on
//! `(root_seed, stream_key)` and on how many values were drawn from it,
//! never on which worker thread owns it.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Name of the generator recorded in traces and manifests.
pub const RNG_ALGORITHM: &str = "chacha20-sha256-keyed";

#[derive(Debug, Clone)]
pub struct RngStream {
    root_seed: u64,
    stream_key: String,
    rng: ChaCha20Rng,
}

/// Derives the stream for `(root_seed, stream_key)`.
pub fn derive_stream(root_seed: u64, stream_key: &str) -> Result<RngStream> {
    if stream_key.is_empty() {
        return Err(Error::invalid("stream key must be nonempty"));
    }
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(stream_key.as_bytes());
    let seed: [u8; 32] = hasher.finalize().into();
    Ok(RngStream {
        root_seed,
        stream_key: stream_key.to_owned(),
        rng: ChaCha20Rng::from_seed(seed),
    })
}

impl RngStream {
    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream_key(&self) -> &str {
        &self.stream_key
    }

    /// Fresh stream keyed `<this key>/<suffix>`; independent of how much of
    /// `self` has been consumed.
    pub fn child(&self, suffix: &str) -> RngStream {
        derive_stream(self.root_seed, &format!("{}/{}", self.stream_key, suffix))
            .expect("child key is never empty")
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn coin(&mut self) -> bool {
        self.rng.next_u32() & 1 == 1
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
