//! Reference watermark schemes and the detection interface.

pub mod adapter;
pub mod bitstream;
pub mod ring;
pub mod transform;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use adapter::ExternalScheme;
pub use bitstream::Carrier;
pub use ring::RingKey;

use crate::buffer::ImageBuffer;
use crate::diffusion::Backend;
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const DWT_DCT_STEP: f64 = 0.16;
pub const DWT_DCT_SVD_STEP: f64 = 0.24;
pub const DEFAULT_PAYLOAD_BITS: usize = 32;
pub const PAYLOAD_LENGTHS: [usize; 3] = [32, 48, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    DwtDct,
    DwtDctSvd,
    FourierRing,
    External,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::DwtDct => "dwt_dct",
            Scheme::DwtDctSvd => "dwt_dct_svd",
            Scheme::FourierRing => "fourier_ring",
            Scheme::External => "external",
        }
    }

    pub fn is_bitstream(self) -> bool {
        matches!(self, Scheme::DwtDct | Scheme::DwtDctSvd)
    }

    pub fn default_strength(self) -> f64 {
        match self {
            Scheme::DwtDct => DWT_DCT_STEP,
            Scheme::DwtDctSvd => DWT_DCT_SVD_STEP,
            Scheme::FourierRing | Scheme::External => 1.0,
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_owned()))
            .map_err(|_| Error::invalid(format!("unknown scheme `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Bits(Vec<bool>),
    Ring(RingKey),
    External(ExternalScheme),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkKey {
    pub scheme: Scheme,
    pub payload: Payload,
    /// QIM step for bitstream schemes, pattern scale for the ring.
    pub strength: f64,
    /// Seeds the QIM dither.
    pub seed: u64,
}

pub fn bit_accuracy(decoded: &[bool], payload: &[bool]) -> Result<f64> {
    if decoded.len() != payload.len() || payload.is_empty() {
        return Err(Error::dim(format!(
            "decoded {} bits against a {}-bit payload",
            decoded.len(),
            payload.len()
        )));
    }
    let agree = decoded.iter().zip(payload).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / payload.len() as f64)
}

fn pack_bits(bits: &[bool]) -> String {
    let bytes: Vec<u8> = bits
        .chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, b)| acc | ((*b as u8) << (7 - i))))
        .collect();
    B64.encode(bytes)
}

fn unpack_bits(s: &str, len: usize) -> Result<Vec<bool>> {
    let bytes = B64.decode(s).map_err(|e| Error::Serde(format!("payload bits: {e}")))?;
    if bytes.len() * 8 < len {
        return Err(Error::Serde(format!("payload has {} bytes, need {len} bits", bytes.len())));
    }
    Ok((0..len).map(|i| bytes[i / 8] >> (7 - i % 8) & 1 == 1).collect())
}

fn b64_field<'a>(v: &'a Value, name: &str) -> Result<&'a str> {
    v.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Serde(format!("key payload missing `{name}`")))
}

fn u64_field(v: &Value, name: &str) -> Result<u64> {
    v.get(name)
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Serde(format!("key payload missing integer `{name}`")))
}

impl WatermarkKey {
    /// Random payload for a bitstream scheme at its default strength.
    pub fn random_bits(scheme: Scheme, n_bits: usize, rng: &mut RngStream) -> Result<Self> {
        if !scheme.is_bitstream() {
            return Err(Error::invalid(format!("{scheme} does not carry a bit payload")));
        }
        let key = WatermarkKey {
            scheme,
            payload: Payload::Bits((0..n_bits).map(|_| rng.coin()).collect()),
            strength: scheme.default_strength(),
            seed: rng.next_u64(),
        };
        key.validate()?;
        Ok(key)
    }

    /// Random ring for latents of `shape`, on the last channel.
    pub fn random_ring(shape: (usize, usize, usize), rng: &mut RngStream) -> Result<Self> {
        let base_seed = rng.next_u64();
        let (c, h, w) = shape;
        let ring = RingKey::generate(shape, c - 1, ring::default_radius(h, w), 1.0, base_seed)?;
        Ok(WatermarkKey {
            scheme: Scheme::FourierRing,
            payload: Payload::Ring(ring),
            strength: 1.0,
            seed: base_seed,
        })
    }

    pub fn bits(&self) -> Option<&[bool]> {
        match &self.payload {
            Payload::Bits(b) => Some(b),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength > 0.0 && self.strength.is_finite()) {
            return Err(Error::invalid(format!("strength must be positive, got {}", self.strength)));
        }
        match (&self.payload, self.scheme) {
            (Payload::Bits(b), s) if s.is_bitstream() => {
                if !PAYLOAD_LENGTHS.contains(&b.len()) {
                    return Err(Error::invalid(format!(
                        "payload length {} not one of {PAYLOAD_LENGTHS:?}",
                        b.len()
                    )));
                }
                Ok(())
            }
            (Payload::Ring(r), Scheme::FourierRing) => r.validate(),
            (Payload::External(_), Scheme::External) => Ok(()),
            (_, s) => Err(Error::invalid(format!("payload kind does not match scheme {s}"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let payload = match &self.payload {
            Payload::Bits(b) => json!({ "length": b.len(), "bits": pack_bits(b) }),
            Payload::Ring(r) => {
                let pattern: Vec<u8> = r
                    .pattern
                    .iter()
                    .flat_map(|c| [c.re.to_le_bytes(), c.im.to_le_bytes()])
                    .flatten()
                    .collect();
                let mask: Vec<u8> = r.mask.iter().map(|m| *m as u8).collect();
                json!({
                    "channel": r.channel,
                    "height": r.height,
                    "width": r.width,
                    "base_seed": r.base_seed,
                    "ring_pattern": B64.encode(pattern),
                    "ring_mask": B64.encode(mask),
                })
            }
            Payload::External(e) => serde_json::to_value(e)?,
        };
        Ok(serde_json::to_string_pretty(&json!({
            "scheme": self.scheme,
            "strength": self.strength,
            "seed": self.seed,
            "payload": payload,
        }))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let scheme: Scheme = serde_json::from_value(v.get("scheme").cloned().unwrap_or(Value::Null))?;
        let strength = v
            .get("strength")
            .and_then(Value::as_f64)
            .unwrap_or_else(|| scheme.default_strength());
        let seed = v.get("seed").and_then(Value::as_u64).unwrap_or(0);
        let p = v.get("payload").ok_or_else(|| Error::Serde("key missing `payload`".into()))?;
        let payload = match scheme {
            Scheme::DwtDct | Scheme::DwtDctSvd => {
                let len = u64_field(p, "length")? as usize;
                Payload::Bits(unpack_bits(b64_field(p, "bits")?, len)?)
            }
            Scheme::FourierRing => {
                let field = |n: &str| u64_field(p, n).map(|x| x as usize);
                let raw = B64
                    .decode(b64_field(p, "ring_pattern")?)
                    .map_err(|e| Error::Serde(format!("ring_pattern: {e}")))?;
                if raw.len() % 16 != 0 {
                    return Err(Error::Serde("ring_pattern is not a list of complex f64".into()));
                }
                let pattern = raw
                    .chunks_exact(16)
                    .map(|c| {
                        Complex64::new(
                            f64::from_le_bytes(c[..8].try_into().unwrap()),
                            f64::from_le_bytes(c[8..].try_into().unwrap()),
                        )
                    })
                    .collect();
                let mask = B64
                    .decode(b64_field(p, "ring_mask")?)
                    .map_err(|e| Error::Serde(format!("ring_mask: {e}")))?
                    .into_iter()
                    .map(|b| b != 0)
                    .collect();
                Payload::Ring(RingKey {
                    channel: field("channel")?,
                    height: field("height")?,
                    width: field("width")?,
                    base_seed: u64_field(p, "base_seed")?,
                    pattern,
                    mask,
                })
            }
            Scheme::External => Payload::External(serde_json::from_value(p.clone())?),
        };
        let key = WatermarkKey {
            scheme,
            payload,
            strength,
            seed,
        };
        key.validate()?;
        Ok(key)
    }
}

/// Embeds a post-hoc watermark into an existing image.
pub fn embed(x: &ImageBuffer, key: &WatermarkKey) -> Result<ImageBuffer> {
    key.validate()?;
    match (&key.payload, key.scheme) {
        (Payload::Bits(bits), Scheme::DwtDct) => bitstream::embed_bits(x, bits, Carrier::MidBand, key.strength, key.seed),
        (Payload::Bits(bits), Scheme::DwtDctSvd) => {
            bitstream::embed_bits(x, bits, Carrier::LeadingSingular, key.strength, key.seed)
        }
        (Payload::External(ext), _) => adapter::embed_external(x, ext, key),
        _ => Err(Error::invalid(format!(
            "{} is generation-time; use embed_fourier_ring",
            key.scheme
        ))),
    }
}

pub use ring::{embed_fourier_ring, generate_unmarked};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Detected,
    NotDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub statistic: f64,
    pub decoded: Option<Vec<bool>>,
    pub decision: Decision,
    pub threshold_used: f64,
}

/// Scheme statistic (bit accuracy or negative ring distance) and decoded bits.
pub fn score(x: &ImageBuffer, key: &WatermarkKey, backend: Option<&Backend>) -> Result<(f64, Option<Vec<bool>>)> {
    match (&key.payload, key.scheme) {
        (Payload::Bits(bits), s) => {
            let carrier = if s == Scheme::DwtDct {
                Carrier::MidBand
            } else {
                Carrier::LeadingSingular
            };
            let decoded = bitstream::decode_bits(x, bits.len(), carrier, key.strength, key.seed)?;
            Ok((bit_accuracy(&decoded, bits)?, Some(decoded)))
        }
        (Payload::Ring(r), _) => {
            let backend = backend.ok_or_else(|| Error::Backend("fourier_ring detection needs a diffusion backend".into()))?;
            Ok((ring::ring_statistic(x, r, backend)?, None))
        }
        (Payload::External(ext), _) => adapter::detect_external(x, ext, key),
    }
}

pub fn detect(x: &ImageBuffer, key: &WatermarkKey, backend: Option<&Backend>, threshold: f64) -> Result<DetectionOutcome> {
    let (statistic, decoded) = score(x, key, backend)?;
    Ok(DetectionOutcome {
        statistic,
        decoded,
        decision: if statistic >= threshold {
            Decision::Detected
        } else {
            Decision::NotDetected
        },
        threshold_used: threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    #[test]
    fn bits_pack_round_trip() {
        let mut rng = derive_stream(1, "bits").unwrap();
        for n in PAYLOAD_LENGTHS {
            let bits: Vec<bool> = (0..n).map(|_| rng.coin()).collect();
            assert_eq!(unpack_bits(&pack_bits(&bits), n).unwrap(), bits);
        }
    }

    #[test]
    fn key_json_round_trip() {
        let mut rng = derive_stream(2, "keys").unwrap();
        for key in [
            WatermarkKey::random_bits(Scheme::DwtDct, 48, &mut rng).unwrap(),
            WatermarkKey::random_ring((4, 16, 16), &mut rng).unwrap(),
            WatermarkKey {
                scheme: Scheme::External,
                payload: Payload::External(ExternalScheme {
                    command: "wm".into(),
                    args: vec!["--fast".into()],
                    key: json!({"k": 1}),
                }),
                strength: 1.0,
                seed: 0,
            },
        ] {
            assert_eq!(WatermarkKey::from_json(&key.to_json().unwrap()).unwrap(), key);
        }
    }

    #[test]
    fn bad_payload_length() {
        let mut rng = derive_stream(2, "keys").unwrap();
        assert!(WatermarkKey::random_bits(Scheme::DwtDct, 40, &mut rng).is_err());
    }

    #[test]
    fn accuracy_of_complement_is_zero() {
        let a = vec![true, false, true, true];
        let b: Vec<bool> = a.iter().map(|x| !x).collect();
        assert_eq!(bit_accuracy(&a, &a).unwrap(), 1.0);
        assert_eq!(bit_accuracy(&b, &a).unwrap(), 0.0);
    }

    #[test]
    fn ring_without_backend_errors() {
        let mut rng = derive_stream(3, "k").unwrap();
        let key = WatermarkKey::random_ring((4, 16, 16), &mut rng).unwrap();
        let x = ImageBuffer::filled(64, 64, [0.5; 3], "x").unwrap();
        assert!(matches!(detect(&x, &key, None, 0.0), Err(Error::Backend(_))));
    }
}
