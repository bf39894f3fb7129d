//! Attention primitives and the routing hook exposed by denoisers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `n x dim` token features.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Tokens {
    pub fn new(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * dim {
            return Err(Error::dim(format!("{n} tokens of dim {dim} need {} values, got {}", n * dim, data.len())));
        }
        Ok(Self { n, dim, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `tokens * w^T` for a row-major `out x dim` matrix `w`.
    pub fn project(&self, w: &Matrix) -> Result<Tokens> {
        if w.cols != self.dim {
            return Err(Error::dim(format!("projection expects dim {}, tokens have {}", w.cols, self.dim)));
        }
        let mut out = vec![0.0; self.n * w.rows];
        for i in 0..self.n {
            let x = self.row(i);
            for (o, wr) in w.data.chunks_exact(w.cols).enumerate() {
                out[i * w.rows + o] = dot(x, wr);
            }
        }
        Tokens::new(self.n, w.rows, out)
    }
}

/// Small dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!("{rows}x{cols} matrix needs {} values", rows * cols)));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Query/key/value projections of one attention site.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnProjections {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl AttnProjections {
    /// Width `d` of the query/key space; logits are scaled by `1/sqrt(d)`.
    pub fn head_dim(&self) -> usize {
        self.w_q.rows
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place numerically stable softmax.
pub fn softmax(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Row-stochastic weights `softmax(Q K^T / sqrt(d))`, row-major `n_q x n_k`.
pub fn attention_weights(queries: &Tokens, keys: &Tokens) -> Result<Vec<f64>> {
    if queries.dim() != keys.dim() {
        return Err(Error::dim(format!("query dim {} vs key dim {}", queries.dim(), keys.dim())));
    }
    let scale = 1.0 / (queries.dim() as f64).sqrt();
    let nk = keys.len();
    let mut w = vec![0.0; queries.len() * nk];
    for (i, row) in w.chunks_exact_mut(nk).enumerate() {
        let q = queries.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = dot(q, keys.row(j)) * scale;
        }
        softmax(row);
    }
    Ok(w)
}

/// `softmax((W_Q q_src)(W_K kv_src)^T / sqrt(d)) W_V kv_src`.
///
/// Queries are projected from `query_src`, keys and values from `kv_src`.
pub fn attend(query_src: &Tokens, kv_src: &Tokens, proj: &AttnProjections) -> Result<Tokens> {
    let q = query_src.project(&proj.w_q)?;
    let k = kv_src.project(&proj.w_k)?;
    let v = kv_src.project(&proj.w_v)?;
    let weights = attention_weights(&q, &k)?;
    let (nk, dv) = (k.len(), v.dim());
    let mut out = vec![0.0; q.len() * dv];
    for (i, wrow) in weights.chunks_exact(nk).enumerate() {
        let o = &mut out[i * dv..(i + 1) * dv];
        for (j, wij) in wrow.iter().enumerate() {
            for (oc, vc) in o.iter_mut().zip(v.row(j)) {
                *oc += wij * vc;
            }
        }
    }
    Tokens::new(q.len(), dv, out)
}

/// Ordinary self-attention on one token set.
pub fn self_attention(hidden: &Tokens, proj: &AttnProjections) -> Result<Tokens> {
    attend(hidden, hidden, proj)
}

/// Stable address of a self-attention site: `(block, layer index)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteId {
    pub block: String,
    pub layer: usize,
}

impl SiteId {
    pub fn new(block: impl Into<String>, layer: usize) -> Self {
        Self {
            block: block.into(),
            layer,
        }
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.block, self.layer)
    }
}

/// Classifier-free guidance branch a denoiser call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Unconditional,
    Conditional,
}

/// Everything a router sees at a self-attention site.
pub struct AttentionSite<'a> {
    pub id: &'a SiteId,
    pub timestep: usize,
    pub branch: Branch,
    pub hidden: &'a Tokens,
    pub proj: &'a AttnProjections,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterMode {
    Standard,
    ViewGuided,
}

/// Hook invoked at every self-attention site of a denoiser.
pub trait AttentionRouter {
    fn mode(&self) -> RouterMode;

    fn route(&mut self, site: &AttentionSite<'_>) -> Result<Tokens>;
}

/// Plain self-attention; indistinguishable from having no router.
#[derive(Debug, Default, Clone, Copy)]
pub struct StandardRouter;

impl AttentionRouter for StandardRouter {
    fn mode(&self) -> RouterMode {
        RouterMode::Standard
    }

    fn route(&mut self, site: &AttentionSite<'_>) -> Result<Tokens> {
        self_attention(site.hidden, site.proj)
    }
}
