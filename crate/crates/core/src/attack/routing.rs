//! View-guided correspondence attention and step-synchronous dual-path
//! denoising.

use std::collections::HashMap;

use crate::buffer::Latent;
use crate::diffusion::attention::{attend, self_attention};
use crate::diffusion::ddim::{ddim_transfer, guided_eps, sampling_timesteps};
use crate::diffusion::{AttentionRouter, AttentionSite, AttnProjections, Backend, Branch, Conditioning, RouterMode, SiteId, Tokens};
use crate::error::{Error, Result};

/// `softmax((W_Q q_src)(W_K ref)^T / sqrt(d)) W_V ref`; `site` names the layer in errors.
pub fn view_attention(q_src: &Tokens, reference: &Tokens, proj: &AttnProjections, site: &SiteId) -> Result<Tokens> {
    if q_src.len() != reference.len() || q_src.dim() != reference.dim() {
        return Err(Error::dim(format!(
            "view attention at layer {site}: transformed path has {}x{}, reference has {}x{}",
            q_src.len(),
            q_src.dim(),
            reference.len(),
            reference.dim()
        )));
    }
    attend(q_src, reference, proj).map_err(|e| Error::dim(format!("view attention at layer {site}: {e}")))
}

/// Reference hidden states of one denoising step, keyed by site and branch.
#[derive(Debug, Default)]
pub struct ReferenceBank {
    timestep: Option<usize>,
    features: HashMap<(SiteId, Branch), Tokens>,
}

impl ReferenceBank {
    pub fn begin_step(&mut self, t: usize) {
        self.timestep = Some(t);
        self.features.clear();
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, site: &SiteId, branch: Branch, t: usize) -> Result<&Tokens> {
        if self.timestep != Some(t) {
            return Err(Error::Backend(format!(
                "reference features are for t={:?}, attack path asked for t={t} at layer {site}",
                self.timestep
            )));
        }
        self.features
            .get(&(site.clone(), branch))
            .ok_or_else(|| Error::Backend(format!("no reference features captured at layer {site} ({branch:?}, t={t})")))
    }
}

/// Standard self-attention that also records the hidden states it sees.
pub struct CaptureRouter<'a> {
    pub bank: &'a mut ReferenceBank,
}

impl AttentionRouter for CaptureRouter<'_> {
    fn mode(&self) -> RouterMode {
        RouterMode::Standard
    }

    fn route(&mut self, site: &AttentionSite<'_>) -> Result<Tokens> {
        self.bank
            .features
            .insert((site.id.clone(), site.branch), site.hidden.clone());
        self_attention(site.hidden, site.proj)
    }
}

/// Queries from the transformed path, keys and values from the reference bank.
pub struct ViewGuidedRouter<'a> {
    pub bank: &'a ReferenceBank,
}

impl AttentionRouter for ViewGuidedRouter<'_> {
    fn mode(&self) -> RouterMode {
        RouterMode::ViewGuided
    }

    fn route(&mut self, site: &AttentionSite<'_>) -> Result<Tokens> {
        let reference = self.bank.get(site.id, site.branch, site.timestep)?;
        view_attention(site.hidden, reference, site.proj, site.id)
    }
}

/// Denoises the reference latent and the transformed latent in lock-step.
/// With [`RouterMode::ViewGuided`] the transformed path attends to the
/// reference path's features from the same step; with
/// [`RouterMode::Standard`] the two paths are independent.
/// Returns `(reference z_0, attack z_0)`.
pub fn dual_path_sample(
    backend: &Backend,
    z_ref: &Latent,
    z_att: &Latent,
    steps: usize,
    cond: &Conditioning,
    guidance: f64,
    mode: RouterMode,
) -> Result<(Latent, Latent)> {
    z_ref.same_shape(z_att)?;
    let from = z_ref
        .timestep_tag
        .ok_or_else(|| Error::invalid("dual-path sampling needs a timestep tag"))?;
    if z_att.timestep_tag != Some(from) {
        return Err(Error::invalid(format!(
            "paths start at different timesteps: {from} vs {:?}",
            z_att.timestep_tag
        )));
    }
    let schedule = &backend.schedule;
    let ts = sampling_timesteps(schedule, steps, from)?;
    let (mut zr, mut za) = (z_ref.clone(), z_att.clone());
    let mut bank = ReferenceBank::default();
    for (k, pair) in ts.windows(2).enumerate() {
        let (t, prev) = (pair[0], pair[1]);
        bank.begin_step(t);
        let eps_r = guided_eps(backend, &zr, t, cond, guidance, Some(&mut CaptureRouter { bank: &mut bank }))?;
        let eps_a = match mode {
            RouterMode::ViewGuided => guided_eps(backend, &za, t, cond, guidance, Some(&mut ViewGuidedRouter { bank: &bank }))?,
            RouterMode::Standard => guided_eps(backend, &za, t, cond, guidance, None)?,
        };
        zr = ddim_transfer(&zr, &eps_r, t, prev, schedule)?;
        za = ddim_transfer(&za, &eps_a, t, prev, schedule)?;
        for (name, z) in [("reference", &zr), ("attack", &za)] {
            if !z.is_finite() {
                return Err(Error::NonFinite {
                    stage: format!("{name} path step {k} (t={t}->{prev})"),
                });
            }
        }
    }
    Ok((zr.with_tag(0), za.with_tag(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::attention::Matrix;
    use crate::rng::derive_stream;

    fn proj(d: usize, seed: u64) -> AttnProjections {
        let mut rng = derive_stream(seed, "proj").unwrap();
        let mut m = || Matrix::new(d, d, rng.normals(d * d)).unwrap();
        AttnProjections {
            w_q: m(),
            w_k: m(),
            w_v: m(),
        }
    }

    fn tokens(n: usize, d: usize, seed: u64) -> Tokens {
        Tokens::new(n, d, derive_stream(seed, "tok").unwrap().normals(n * d)).unwrap()
    }

    #[test]
    fn coincident_paths_equal_self_attention() {
        let p = proj(3, 1);
        let x = tokens(5, 3, 2);
        let site = SiteId::new("mid", 0);
        assert_eq!(view_attention(&x, &x, &p, &site).unwrap(), self_attention(&x, &p).unwrap());
    }

    #[test]
    fn single_token_returns_value() {
        let p = proj(2, 3);
        let (q, r) = (tokens(1, 2, 4), tokens(1, 2, 5));
        let out = view_attention(&q, &r, &p, &SiteId::new("mid", 0)).unwrap();
        let v = r.project(&p.w_v).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn mismatch_names_layer() {
        let p = proj(2, 3);
        let err = view_attention(&tokens(3, 2, 1), &tokens(4, 2, 1), &p, &SiteId::new("up", 2)).unwrap_err();
        assert!(err.to_string().contains("up.2"), "{err}");
    }

    #[test]
    fn bank_rejects_stale_step() {
        let mut bank = ReferenceBank::default();
        bank.begin_step(5);
        assert!(bank.get(&SiteId::new("mid", 0), Branch::Unconditional, 4).is_err());
    }
}
