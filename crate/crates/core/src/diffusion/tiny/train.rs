//! Closed-form fitting of the tiny backend on the toy domain.
//!
//! Run `cargo run --release -p raven-core --example train_tiny` to regenerate
//! `assets/tiny_backend.json`.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{
    centre_selector, neighbourhoods, patches, ScheduleParams, TimestepWeights, TinyWeights, FACTOR, NEIGHBOURS,
    PATCH_DIM,
};
use crate::buffer::{ImageBuffer, Latent};
use crate::diffusion::attention::{attention_weights, Matrix, Tokens};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng::derive_stream;
use crate::toy::toy_image;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    pub train_images: usize,
    pub val_images: usize,
    pub image_size: usize,
    pub latent_channels: usize,
    pub head_dim: usize,
    pub ridge: f64,
    pub temperatures: Vec<f64>,
    pub schedule: ScheduleParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0x7eed_5eed,
            train_images: 160,
            val_images: 40,
            image_size: 64,
            latent_channels: 4,
            head_dim: 8,
            ridge: 1e-4,
            temperatures: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
            schedule: ScheduleParams {
                steps: 50,
                beta_start: 0.01,
                beta_end: 0.2,
            },
        }
    }
}

/// Accumulates normal equations for a multi-output ridge regression.
struct Ridge {
    xtx: DMatrix<f64>,
    xty: DMatrix<f64>,
}

impl Ridge {
    fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            xtx: DMatrix::zeros(inputs, inputs),
            xty: DMatrix::zeros(inputs, outputs),
        }
    }

    fn add(&mut self, x: &[f64], y: &[f64]) {
        let n = x.len();
        for a in 0..n {
            let xa = x[a];
            if xa == 0.0 {
                continue;
            }
            for b in a..n {
                self.xtx[(a, b)] += xa * x[b];
            }
            for (o, yo) in y.iter().enumerate() {
                self.xty[(a, o)] += xa * yo;
            }
        }
    }

    /// Solution as an `inputs x outputs` matrix.
    fn solve(&self, ridge: f64) -> Result<DMatrix<f64>> {
        let n = self.xtx.nrows();
        let mut a = self.xtx.clone();
        for r in 0..n {
            for c in 0..r {
                a[(r, c)] = a[(c, r)];
            }
        }
        let scale = (0..n).map(|i| a[(i, i)]).sum::<f64>() / n as f64;
        for i in 0..n {
            a[(i, i)] += ridge * scale.max(1e-12);
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Numeric("ridge normal equations not positive definite".into()))?;
        Ok(chol.solve(&self.xty))
    }
}

/// Leading `k` eigenpairs of a symmetric matrix, sign-normalised so the
/// largest-magnitude entry of each vector is positive.
fn leading_eigen(cov: DMatrix<f64>, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let mut vals = Vec::with_capacity(k);
    let mut vecs = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        vals.push(eig.eigenvalues[i].max(1e-12));
        vecs.push(v);
    }
    (vals, vecs)
}

fn covariance(samples: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        for a in 0..d {
            let da = s[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (s[b] - mean[b]) / n;
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    (mean, cov)
}

fn encode_with(encoder: &[f64], mean: &[f64], channels: usize, x: &ImageBuffer) -> Result<Latent> {
    let (lh, lw) = (x.height() / FACTOR, x.width() / FACTOR);
    let mut data = vec![0.0; channels * lh * lw];
    for (cell, p) in patches(x).iter().enumerate() {
        for ch in 0..channels {
            let e = &encoder[ch * PATCH_DIM..(ch + 1) * PATCH_DIM];
            data[ch * lh * lw + cell] = (0..PATCH_DIM).map(|k| e[k] * (p[k] - mean[k])).sum();
        }
    }
    Latent::new(channels, lh, lw, data)
}

/// Attention output of `hidden` with query temperature folded into the logits.
fn attend_values(logits_base: &Tokens, hidden_keys: &Tokens, values: &Tokens, temperature: f64) -> Result<Vec<f64>> {
    let q = Tokens::new(
        logits_base.len(),
        logits_base.dim(),
        logits_base.data().iter().map(|v| v * temperature).collect(),
    )?;
    let w = attention_weights(&q, hidden_keys)?;
    let (nk, dv) = (hidden_keys.len(), values.dim());
    let mut out = vec![0.0; q.len() * dv];
    for (i, row) in w.chunks_exact(nk).enumerate() {
        for (j, wij) in row.iter().enumerate() {
            for c in 0..dv {
                out[i * dv + c] += wij * values.row(j)[c];
            }
        }
    }
    Ok(out)
}

/// Fits all tiny-backend weights.
pub fn fit(cfg: &TrainConfig) -> Result<TinyWeights> {
    let c = cfg.latent_channels;
    let total = cfg.train_images + cfg.val_images;
    let size = (cfg.image_size, cfg.image_size);
    let images: Vec<ImageBuffer> = (0..total)
        .map(|i| {
            let mut rng = derive_stream(cfg.seed, &format!("fit:image:{i}"))?;
            toy_image(size, &mut rng, &format!("fit{i}"))
        })
        .collect::<Result<_>>()?;

    // encoder: whitened leading principal components of patches
    let patch_samples: Vec<Vec<f64>> = images.iter().flat_map(|x| patches(x).into_iter().map(|p| p.to_vec())).collect();
    let (patch_mean, cov) = covariance(&patch_samples);
    let (lambda, comps) = leading_eigen(cov, c);
    let mut encoder = vec![0.0; c * PATCH_DIM];
    for ch in 0..c {
        for p in 0..PATCH_DIM {
            encoder[ch * PATCH_DIM + p] = comps[ch][p] / lambda[ch].sqrt();
        }
    }
    let latents: Vec<Latent> = images
        .iter()
        .map(|x| encode_with(&encoder, &patch_mean, c, x))
        .collect::<Result<_>>()?;

    // decoder: out-of-span residual regressed on the neighbourhood, plus the
    // exact in-span reconstruction from the centre cell
    let fd = NEIGHBOURS * c;
    let mut ridge = Ridge::new(fd, PATCH_DIM);
    for (x, z) in images.iter().zip(&latents) {
        let feats = neighbourhoods(z);
        for (cell, p) in patches(x).iter().enumerate() {
            let centred: Vec<f64> = (0..PATCH_DIM).map(|k| p[k] - patch_mean[k]).collect();
            let resid = project_out(&centred, &comps);
            ridge.add(feats.row(cell), &resid);
        }
    }
    let w = ridge.solve(cfg.ridge)?;
    let mut decoder = vec![0.0; NEIGHBOURS * PATCH_DIM * c];
    for k in 0..NEIGHBOURS {
        for ch in 0..c {
            let col: Vec<f64> = (0..PATCH_DIM).map(|p| w[(ch * NEIGHBOURS + k, p)]).collect();
            let col = project_out(&col, &comps);
            for p in 0..PATCH_DIM {
                let mut v = col[p];
                if k == 4 {
                    v += comps[ch][p] * lambda[ch].sqrt();
                }
                decoder[(k * PATCH_DIM + p) * c + ch] = v;
            }
        }
    }

    // attention projection: leading components of clean neighbourhoods
    let neigh_samples: Vec<Vec<f64>> = latents
        .iter()
        .flat_map(|z| {
            let t = neighbourhoods(z);
            (0..t.len()).map(move |i| t.row(i).to_vec()).collect::<Vec<_>>()
        })
        .collect();
    let (_, ncov) = covariance(&neigh_samples);
    let (nl, nv) = leading_eigen(ncov, cfg.head_dim);
    let norm = (nl.iter().sum::<f64>() / nl.len() as f64).sqrt();
    let attn_proj: Vec<f64> = nv.iter().flat_map(|v| v.iter().map(move |x| x / norm)).collect();
    let p = Matrix::new(cfg.head_dim, fd, attn_proj.clone())?;
    let selector = centre_selector(c);

    let schedule = NoiseSchedule::linear_beta(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end)?;
    let rd = fd + c + 1;
    let mut timesteps = Vec::with_capacity(schedule.len());
    for t in 1..=schedule.len() {
        let ab = schedule.alpha_bar(t);
        // per image: (hidden, projected keys, values, targets)
        let prepared: Vec<(Tokens, Tokens, Tokens, &Latent)> = latents
            .iter()
            .enumerate()
            .map(|(i, z0)| {
                let mut rng = derive_stream(cfg.seed, &format!("fit:t:{t}:image:{i}"))?;
                let mut zt = z0.clone();
                for v in zt.data_mut() {
                    *v = ab.sqrt() * *v + (1.0 - ab).sqrt() * rng.normal();
                }
                let hidden = neighbourhoods(&zt);
                let keys = hidden.project(&p)?;
                let values = hidden.project(&selector)?;
                Ok((hidden, keys, values, z0))
            })
            .collect::<Result<_>>()?;

        let mut best: Option<(f64, f64)> = None;
        for &temp in &cfg.temperatures {
            let mut fit_set = Ridge::new(rd, c);
            let feats_cache: Vec<Vec<f64>> = prepared
                .iter()
                .map(|(_, keys, values, _)| attend_values(keys, keys, values, temp))
                .collect::<Result<_>>()?;
            for ((hidden, _, _, z0), a) in prepared.iter().zip(&feats_cache).take(cfg.train_images) {
                accumulate(&mut fit_set, hidden, a, z0, c);
            }
            let sol = fit_set.solve(cfg.ridge)?;
            let mut err = 0.0;
            for ((hidden, _, _, z0), a) in prepared.iter().zip(&feats_cache).skip(cfg.train_images) {
                err += readout_error(&sol, hidden, a, z0, c);
            }
            if best.map_or(true, |(e, _)| err < e) {
                best = Some((err, temp));
            }
        }
        let (_, temp) = best.expect("at least one temperature");
        let mut full = Ridge::new(rd, c);
        for (hidden, keys, values, z0) in &prepared {
            let a = attend_values(keys, keys, values, temp)?;
            accumulate(&mut full, hidden, &a, z0, c);
        }
        let sol = full.solve(cfg.ridge)?;
        let mut readout = vec![0.0; c * rd];
        for ch in 0..c {
            for f in 0..rd {
                readout[ch * rd + f] = sol[(f, ch)];
            }
        }
        timesteps.push(TimestepWeights {
            temperature: temp,
            readout,
        });
    }

    let weights = TinyWeights {
        version: 1,
        latent_channels: c,
        head_dim: cfg.head_dim,
        patch_mean,
        encoder,
        decoder,
        attn_proj,
        schedule: cfg.schedule.clone(),
        timesteps,
    };
    weights.validate()?;
    Ok(weights)
}

fn project_out(v: &[f64], comps: &[Vec<f64>]) -> Vec<f64> {
    let mut out = v.to_vec();
    for u in comps {
        let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        for (o, uu) in out.iter_mut().zip(u) {
            *o -= d * uu;
        }
    }
    out
}

fn feature_row(hidden: &Tokens, attn: &[f64], i: usize, c: usize) -> Vec<f64> {
    let mut row = hidden.row(i).to_vec();
    row.extend_from_slice(&attn[i * c..(i + 1) * c]);
    row.push(1.0);
    row
}

fn accumulate(r: &mut Ridge, hidden: &Tokens, attn: &[f64], z0: &Latent, c: usize) {
    let n = hidden.len();
    let mut y = vec![0.0; c];
    for i in 0..n {
        for (ch, yv) in y.iter_mut().enumerate() {
            *yv = z0.data()[ch * n + i];
        }
        r.add(&feature_row(hidden, attn, i, c), &y);
    }
}

fn readout_error(sol: &DMatrix<f64>, hidden: &Tokens, attn: &[f64], z0: &Latent, c: usize) -> f64 {
    let n = hidden.len();
    let mut err = 0.0;
    for i in 0..n {
        let row = feature_row(hidden, attn, i, c);
        for ch in 0..c {
            let pred: f64 = row.iter().enumerate().map(|(f, x)| x * sol[(f, ch)]).sum();
            err += (pred - z0.data()[ch * n + i]).powi(2);
        }
    }
    err
}
