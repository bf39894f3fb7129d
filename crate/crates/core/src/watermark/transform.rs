//! Luma extraction, orthonormal Haar DWT and 4x4 orthonormal DCT.

use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};

pub const BLOCK: usize = 4;

/// BT.601 luma of each pixel.
pub fn luma(x: &ImageBuffer) -> Vec<f64> {
    x.data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

/// Adds a luma offset to every pixel. With BT.601 YCbCr held fixed this is an
/// equal shift of R, G and B. Result is clipped.
pub fn add_luma(x: &ImageBuffer, delta: &[f64]) -> Result<ImageBuffer> {
    let data = x
        .data()
        .chunks_exact(3)
        .zip(delta)
        .flat_map(|(p, d)| [p[0] + d, p[1] + d, p[2] + d])
        .collect();
    Ok(ImageBuffer::from_unclipped(x.height(), x.width(), data, x.source_id.clone())?.0)
}

/// Single-level orthonormal Haar bands of a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarBands {
    pub height: usize,
    pub width: usize,
    pub ll: Vec<f64>,
    pub lh: Vec<f64>,
    pub hl: Vec<f64>,
    pub hh: Vec<f64>,
}

pub fn haar_forward(plane: &[f64], height: usize, width: usize) -> Result<HaarBands> {
    if height % 2 != 0 || width % 2 != 0 || plane.len() != height * width {
        return Err(Error::dim(format!("Haar DWT needs even dims, got {height}x{width}")));
    }
    let (h, w) = (height / 2, width / 2);
    let mut b = HaarBands {
        height: h,
        width: w,
        ll: vec![0.0; h * w],
        lh: vec![0.0; h * w],
        hl: vec![0.0; h * w],
        hh: vec![0.0; h * w],
    };
    for i in 0..h {
        for j in 0..w {
            let a = plane[(2 * i) * width + 2 * j];
            let bb = plane[(2 * i) * width + 2 * j + 1];
            let c = plane[(2 * i + 1) * width + 2 * j];
            let d = plane[(2 * i + 1) * width + 2 * j + 1];
            let k = i * w + j;
            b.ll[k] = (a + bb + c + d) / 2.0;
            b.lh[k] = (a - bb + c - d) / 2.0;
            b.hl[k] = (a + bb - c - d) / 2.0;
            b.hh[k] = (a - bb - c + d) / 2.0;
        }
    }
    Ok(b)
}

pub fn haar_inverse(b: &HaarBands) -> Vec<f64> {
    let (h, w) = (b.height, b.width);
    let width = 2 * w;
    let mut out = vec![0.0; 4 * h * w];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let (ll, lh, hl, hh) = (b.ll[k], b.lh[k], b.hl[k], b.hh[k]);
            out[(2 * i) * width + 2 * j] = (ll + lh + hl + hh) / 2.0;
            out[(2 * i) * width + 2 * j + 1] = (ll - lh + hl - hh) / 2.0;
            out[(2 * i + 1) * width + 2 * j] = (ll + lh - hl - hh) / 2.0;
            out[(2 * i + 1) * width + 2 * j + 1] = (ll - lh - hl + hh) / 2.0;
        }
    }
    out
}

fn dct_basis() -> [[f64; BLOCK]; BLOCK] {
    let mut m = [[0.0; BLOCK]; BLOCK];
    let n = BLOCK as f64;
    for (k, row) in m.iter_mut().enumerate() {
        let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = s * (std::f64::consts::PI * (2.0 * x as f64 + 1.0) * k as f64 / (2.0 * n)).cos();
        }
    }
    m
}

pub type Block = [[f64; BLOCK]; BLOCK];

/// Orthonormal 2-D DCT-II of a 4x4 block.
pub fn dct2(block: &Block) -> Block {
    let m = dct_basis();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for u in 0..BLOCK {
        for x in 0..BLOCK {
            tmp[u][x] = (0..BLOCK).map(|y| m[u][y] * block[y][x]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            out[u][v] = (0..BLOCK).map(|x| tmp[u][x] * m[v][x]).sum();
        }
    }
    out
}

pub fn idct2(coef: &Block) -> Block {
    let m = dct_basis();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for y in 0..BLOCK {
        for v in 0..BLOCK {
            tmp[y][v] = (0..BLOCK).map(|u| m[u][y] * coef[u][v]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y][x] = (0..BLOCK).map(|v| tmp[y][v] * m[v][x]).sum();
        }
    }
    out
}

/// Number of full 4x4 blocks in a plane, and the block grid width.
pub fn block_grid(height: usize, width: usize) -> (usize, usize) {
    let (bh, bw) = (height / BLOCK, width / BLOCK);
    (bh * bw, bw)
}

pub fn read_block(plane: &[f64], width: usize, bi: usize, bj: usize) -> Block {
    let mut b = [[0.0; BLOCK]; BLOCK];
    for (y, row) in b.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = plane[(bi * BLOCK + y) * width + bj * BLOCK + x];
        }
    }
    b
}

pub fn write_block(plane: &mut [f64], width: usize, bi: usize, bj: usize, b: &Block) {
    for (y, row) in b.iter().enumerate() {
        for (x, v) in row.iter().enumerate() {
            plane[(bi * BLOCK + y) * width + bj * BLOCK + x] = *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn haar_perfect_reconstruction(seed in 0u64..1000) {
            let mut rng = derive_stream(seed, "haar").unwrap();
            let plane: Vec<f64> = (0..8 * 6).map(|_| rng.normal()).collect();
            let back = haar_inverse(&haar_forward(&plane, 8, 6).unwrap());
            for (a, b) in plane.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn dct_round_trip_and_energy(vals in proptest::collection::vec(-1.0f64..1.0, 16)) {
            let mut b = [[0.0; BLOCK]; BLOCK];
            for (k, v) in vals.iter().enumerate() {
                b[k / 4][k % 4] = *v;
            }
            let c = dct2(&b);
            let e0: f64 = vals.iter().map(|v| v * v).sum();
            let e1: f64 = c.iter().flatten().map(|v| v * v).sum();
            prop_assert!((e0 - e1).abs() < 1e-10);
            let back = idct2(&c);
            for y in 0..4 {
                for x in 0..4 {
                    prop_assert!((back[y][x] - b[y][x]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(haar_forward(&[0.0; 15], 5, 3).is_err());
    }

    #[test]
    fn dc_of_constant_block() {
        let c = dct2(&[[0.5; 4]; 4]);
        assert!((c[0][0] - 2.0).abs() < 1e-12);
        assert!(c.iter().flatten().skip(1).all(|v| v.abs() < 1e-12));
    }
}
