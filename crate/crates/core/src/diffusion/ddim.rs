//! Forward noising and deterministic DDIM stepping (eta = 0).

use serde::{Deserialize, Serialize};

use super::attention::{AttentionRouter, Branch};
use super::schedule::NoiseSchedule;
use super::{Backend, Conditioning};
use crate::buffer::{gaussian_like, Latent};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// How a clean latent is taken to the intermediate timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoisingMode {
    /// `z_tau = sqrt(abar) z + sqrt(1 - abar) eps` with fresh Gaussian noise.
    #[default]
    Stochastic,
    /// Deterministic DDIM inversion up to `tau`.
    DdimInversion,
}

/// `sqrt(abar_tau) z + sqrt(1 - abar_tau) eps` for a given noise sample.
pub fn noise_to(z: &Latent, tau: usize, schedule: &NoiseSchedule, eps: &Latent) -> Result<Latent> {
    z.same_shape(eps)?;
    if tau > schedule.len() {
        return Err(Error::invalid(format!("timestep {tau} beyond schedule length {}", schedule.len())));
    }
    if tau == 0 {
        return Ok(z.clone().with_tag(0));
    }
    let ab = schedule.alpha_bar(tau);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = z.clone();
    for (o, e) in out.data_mut().iter_mut().zip(eps.data()) {
        *o = a * *o + b * e;
    }
    Ok(out.with_tag(tau))
}

/// Noises `z` to `tau = floor(s T)` with `eps` drawn from `rng`.
pub fn forward_noise(
    z: &Latent,
    strength: f64,
    schedule: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<(Latent, usize)> {
    z.ensure_finite("forward_noise input")?;
    let tau = schedule.strength_to_timestep(strength)?;
    if tau == 0 {
        return Ok((z.clone().with_tag(0), 0));
    }
    let eps = gaussian_like(z.shape(), rng)?;
    Ok((noise_to(z, tau, schedule, &eps)?, tau))
}

/// Moves `z` from timestep `from` to `to` along the DDIM direction given by `eps`.
/// Works in both directions; inversion and sampling differ only in where
/// `eps` was evaluated.
pub fn ddim_transfer(z: &Latent, eps: &Latent, from: usize, to: usize, schedule: &NoiseSchedule) -> Result<Latent> {
    z.same_shape(eps)?;
    let (ab_from, ab_to) = (schedule.alpha_bar(from), schedule.alpha_bar(to));
    let (sa_from, sb_from) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (sa_to, sb_to) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
    let mut out = z.clone();
    for (o, e) in out.data_mut().iter_mut().zip(eps.data()) {
        let x0 = (*o - sb_from * e) / sa_from;
        *o = sa_to * x0 + sb_to * e;
    }
    Ok(out.with_tag(to))
}

/// Timesteps visited when denoising from `from` to 0: `from`, then every grid
/// point below it, then 0.
pub fn sampling_timesteps(schedule: &NoiseSchedule, steps: usize, from: usize) -> Result<Vec<usize>> {
    if from > schedule.len() {
        return Err(Error::invalid(format!("timestep {from} beyond schedule length {}", schedule.len())));
    }
    let grid = schedule.ddim_grid(steps)?;
    let mut ts = vec![from];
    ts.extend(grid.into_iter().rev().filter(|t| *t < from));
    if from != 0 {
        ts.push(0);
    }
    Ok(ts)
}

/// Shortens the trait-object lifetime so the router can be lent repeatedly.
pub(crate) fn reborrow<'a>(r: &'a mut Option<&mut dyn AttentionRouter>) -> Option<&'a mut dyn AttentionRouter> {
    match r {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// Noise prediction with classifier-free guidance.
///
/// The unconditional branch always uses the backend's null conditioning. When
/// `cond` equals it, the guided estimate collapses to the unconditional one
/// and only one denoiser call is made.
pub fn guided_eps(
    backend: &Backend,
    z: &Latent,
    t: usize,
    cond: &Conditioning,
    guidance: f64,
    mut router: Option<&mut dyn AttentionRouter>,
) -> Result<Latent> {
    let den = backend.denoiser.as_ref();
    let null = den.null_conditioning();
    if *cond == null {
        return den.predict(z, t, &null, Branch::Unconditional, router);
    }
    if guidance == 1.0 {
        return den.predict(z, t, cond, Branch::Conditional, router);
    }
    let eps_u = den.predict(z, t, &null, Branch::Unconditional, reborrow(&mut router))?;
    let eps_c = den.predict(z, t, cond, Branch::Conditional, router)?;
    let mut out = eps_u;
    for (u, c) in out.data_mut().iter_mut().zip(eps_c.data()) {
        *u += guidance * (c - *u);
    }
    Ok(out)
}

/// Deterministic DDIM inversion from a clean latent up to `target`
/// (default `T`), over the `steps`-point grid.
pub fn ddim_invert(
    backend: &Backend,
    z0: &Latent,
    steps: usize,
    cond: &Conditioning,
    guidance: f64,
    target: Option<usize>,
) -> Result<Latent> {
    let schedule = &backend.schedule;
    let target = target.unwrap_or(schedule.len());
    let mut ts = sampling_timesteps(schedule, steps, target)?;
    ts.reverse();
    let mut z = z0.clone().with_tag(0);
    for (k, pair) in ts.windows(2).enumerate() {
        let (from, to) = (pair[0], pair[1]);
        let eps = guided_eps(backend, &z, to, cond, guidance, None)?;
        z = ddim_transfer(&z, &eps, from, to, schedule)?;
        if !z.is_finite() {
            return Err(Error::NonFinite {
                stage: format!("ddim_invert step {k} (t={from}->{to})"),
            });
        }
    }
    Ok(z.with_tag(target))
}

/// Deterministic DDIM sampling from the latent's tagged timestep down to 0.
pub fn ddim_sample(
    backend: &Backend,
    z_tau: &Latent,
    steps: usize,
    cond: &Conditioning,
    guidance: f64,
    mut router: Option<&mut dyn AttentionRouter>,
) -> Result<Latent> {
    let from = z_tau
        .timestep_tag
        .ok_or_else(|| Error::invalid("ddim_sample needs a latent with a timestep tag"))?;
    let schedule = &backend.schedule;
    let ts = sampling_timesteps(schedule, steps, from)?;
    let mut z = z_tau.clone();
    for (k, pair) in ts.windows(2).enumerate() {
        let (t, prev) = (pair[0], pair[1]);
        let eps = guided_eps(backend, &z, t, cond, guidance, reborrow(&mut router))?;
        z = ddim_transfer(&z, &eps, t, prev, schedule)?;
        if !z.is_finite() {
            return Err(Error::NonFinite {
                stage: format!("ddim_sample step {k} (t={t}->{prev})"),
            });
        }
    }
    Ok(z.with_tag(0))
}
