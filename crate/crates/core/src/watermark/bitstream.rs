//! Invisible bit-string schemes: dithered QIM in the DCT of the Haar LL band.

use nalgebra::Matrix4;

use super::transform::{self, block_grid, dct2, haar_forward, haar_inverse, idct2, read_block, write_block, Block};
use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};
use crate::rng::derive_stream;

/// Which coefficient of each block carries the bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Carrier {
    /// Antisymmetric pair of mid-band DCT coefficients, `(c12 - c21)/sqrt 2`.
    MidBand,
    /// Largest singular value of the block's DCT.
    LeadingSingular,
}

/// Lattice point for `bit` nearest to `v`.
pub fn qim_quantize(v: f64, bit: bool, step: f64, dither: f64) -> f64 {
    let offset = dither + if bit { step / 2.0 } else { 0.0 };
    step * ((v - offset) / step).round() + offset
}

/// Positive when `v` sits closer to the `1` lattice than the `0` lattice.
pub fn qim_score(v: f64, step: f64, dither: f64) -> f64 {
    (v - qim_quantize(v, false, step, dither)).abs() - (v - qim_quantize(v, true, step, dither)).abs()
}

fn dithers(seed: u64, n: usize, step: f64) -> Result<Vec<f64>> {
    let mut rng = derive_stream(seed, "qim:dither")?;
    Ok((0..n).map(|_| rng.uniform() * step).collect())
}

struct LumaPlane {
    height: usize,
    width: usize,
    luma: Vec<f64>,
}

fn even_luma(x: &ImageBuffer) -> Result<LumaPlane> {
    let (h, w) = x.dims();
    let (he, we) = (h - h % 2, w - w % 2);
    let full = transform::luma(x);
    let luma = (0..he).flat_map(|i| full[i * w..i * w + we].to_vec()).collect();
    Ok(LumaPlane {
        height: he,
        width: we,
        luma,
    })
}

fn capacity_check(ll_h: usize, ll_w: usize, n_bits: usize) -> Result<(usize, usize)> {
    let (blocks, bw) = block_grid(ll_h, ll_w);
    if n_bits == 0 {
        return Err(Error::invalid("payload must have at least one bit"));
    }
    if blocks < n_bits {
        return Err(Error::dim(format!(
            "image holds {blocks} 4x4 LL blocks, payload needs {n_bits}"
        )));
    }
    Ok((blocks, bw))
}

fn carrier_value(c: &Block, carrier: Carrier) -> f64 {
    match carrier {
        Carrier::MidBand => (c[1][2] - c[2][1]) / std::f64::consts::SQRT_2,
        Carrier::LeadingSingular => Matrix4::from_fn(|i, j| c[i][j]).singular_values().max(),
    }
}

fn set_carrier(c: &mut Block, carrier: Carrier, target: f64) {
    match carrier {
        Carrier::MidBand => {
            let d = (target - carrier_value(c, carrier)) / std::f64::consts::SQRT_2;
            c[1][2] += d;
            c[2][1] -= d;
        }
        Carrier::LeadingSingular => {
            let m = Matrix4::from_fn(|i, j| c[i][j]);
            let svd = m.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut s = svd.singular_values;
            let k = s.imax();
            s[k] = target;
            let out = u * Matrix4::from_diagonal(&s) * vt;
            for (i, row) in c.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = out[(i, j)];
                }
            }
        }
    }
}

/// Embeds `bits` (repeated cyclically over all blocks) into the luma of `x`.
pub fn embed_bits(x: &ImageBuffer, bits: &[bool], carrier: Carrier, step: f64, seed: u64) -> Result<ImageBuffer> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("quantisation step must be positive, got {step}")));
    }
    let plane = even_luma(x)?;
    let mut bands = haar_forward(&plane.luma, plane.height, plane.width)?;
    let (blocks, bw) = capacity_check(bands.height, bands.width, bits.len())?;
    let dith = dithers(seed, blocks, step)?;
    for b in 0..blocks {
        let (bi, bj) = (b / bw, b % bw);
        let mut c = dct2(&read_block(&bands.ll, bands.width, bi, bj));
        let v = carrier_value(&c, carrier);
        let bit = bits[b % bits.len()];
        let mut target = qim_quantize(v, bit, step, dith[b]);
        if carrier == Carrier::LeadingSingular {
            let floor = second_singular(&c);
            while target < floor {
                target += step;
            }
        }
        set_carrier(&mut c, carrier, target);
        write_block(&mut bands.ll, bands.width, bi, bj, &idct2(&c));
    }
    let marked = haar_inverse(&bands);
    let (h, w) = x.dims();
    let mut delta = vec![0.0; h * w];
    for i in 0..plane.height {
        for j in 0..plane.width {
            delta[i * w + j] = marked[i * plane.width + j] - plane.luma[i * plane.width + j];
        }
    }
    transform::add_luma(x, &delta)
}

fn second_singular(c: &Block) -> f64 {
    let mut s: Vec<f64> = Matrix4::from_fn(|i, j| c[i][j]).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s[1]
}

/// Soft-vote decode of an `n_bits` payload.
pub fn decode_bits(x: &ImageBuffer, n_bits: usize, carrier: Carrier, step: f64, seed: u64) -> Result<Vec<bool>> {
    let plane = even_luma(x)?;
    let bands = haar_forward(&plane.luma, plane.height, plane.width)?;
    let (blocks, bw) = capacity_check(bands.height, bands.width, n_bits)?;
    let dith = dithers(seed, blocks, step)?;
    let mut votes = vec![0.0; n_bits];
    for b in 0..blocks {
        let c = dct2(&read_block(&bands.ll, bands.width, b / bw, b % bw));
        votes[b % n_bits] += qim_score(carrier_value(&c, carrier), step, dith[b]);
    }
    Ok(votes.into_iter().map(|v| v > 0.0).collect())
}
