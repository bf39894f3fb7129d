use serde::{Deserialize, Serialize};

use crate::buffer::hex_digest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleDerivation {
    LinearBeta,
    Cosine,
    BackendNative,
}

/// Cumulative noise schedule over training timesteps `1..=T`.
///
/// Timestep `0` denotes the clean sample, `alpha_bar(0) == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bar: Vec<f64>,
    pub derivation: ScheduleDerivation,
}

impl NoiseSchedule {
    /// Builds a schedule from per-step `alpha_t`, validating monotonicity.
    pub fn from_alphas(alphas: Vec<f64>, derivation: ScheduleDerivation) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::invalid("schedule needs at least one timestep"));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::invalid(format!("alpha {a} must lie in (0,1) for a strictly decreasing schedule")));
        }
        let mut alpha_bar = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self {
            alphas,
            alpha_bar,
            derivation,
        })
    }

    /// `beta_t` linearly spaced in `[beta_start, beta_end]`.
    pub fn linear_beta(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one timestep"));
        }
        let alphas = (0..steps)
            .map(|i| {
                let f = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                1.0 - (beta_start + f * (beta_end - beta_start))
            })
            .collect();
        Self::from_alphas(alphas, ScheduleDerivation::LinearBeta)
    }

    /// Cosine schedule of Nichol & Dhariwal with offset `s = 0.008`.
    pub fn cosine(steps: usize) -> Result<Self> {
        let f = |t: f64| ((t / steps as f64 + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let alphas = (1..=steps)
            .map(|t| (f(t as f64) / f(t as f64 - 1.0)).clamp(1e-4, 0.9999))
            .collect();
        Self::from_alphas(alphas, ScheduleDerivation::Cosine)
    }

    /// Number of training timesteps `T`.
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `tau = floor(s * T)`.
    pub fn strength_to_timestep(&self, strength: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::invalid(format!("strength {strength} outside [0,1]")));
        }
        Ok((strength * self.len() as f64).floor() as usize)
    }

    /// Increasing DDIM grid `floor(k T / n)` for `k = 1..=n`.
    pub fn ddim_grid(&self, steps: usize) -> Result<Vec<usize>> {
        let t = self.len();
        if steps == 0 {
            return Err(Error::invalid("DDIM needs at least one step"));
        }
        if steps > t {
            return Err(Error::invalid(format!("{steps} DDIM steps exceed {t} training timesteps")));
        }
        Ok((1..=steps).map(|k| k * t / steps).collect())
    }

    pub fn hash(&self) -> String {
        let bytes: Vec<u8> = self.alpha_bar.iter().flat_map(|v| v.to_le_bytes()).collect();
        hex_digest(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_products_consistent() {
        let s = NoiseSchedule::linear_beta(50, 0.01, 0.2).unwrap();
        let mut acc = 1.0;
        for t in 1..=50 {
            acc *= s.alphas()[t - 1];
            assert!((acc - s.alpha_bar(t)).abs() <= 1e-12);
        }
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        let c = NoiseSchedule::cosine(50).unwrap();
        assert!(c.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn strength_floor() {
        let s = NoiseSchedule::linear_beta(50, 0.01, 0.2).unwrap();
        assert_eq!(s.strength_to_timestep(0.15).unwrap(), 7);
        assert_eq!(s.strength_to_timestep(0.0).unwrap(), 0);
        assert_eq!(s.strength_to_timestep(1.0).unwrap(), 50);
        assert!(s.strength_to_timestep(1.01).is_err());
        assert!(s.strength_to_timestep(-0.1).is_err());
    }

    #[test]
    fn grid_shapes() {
        let s = NoiseSchedule::linear_beta(50, 0.01, 0.2).unwrap();
        assert_eq!(s.ddim_grid(50).unwrap(), (1..=50).collect::<Vec<_>>());
        assert_eq!(s.ddim_grid(25).unwrap()[..3], [2, 4, 6]);
        assert!(s.ddim_grid(0).is_err());
        assert!(s.ddim_grid(51).is_err());
    }

    #[test]
    fn rejects_degenerate_alphas() {
        assert!(NoiseSchedule::from_alphas(vec![0.9, 1.0], ScheduleDerivation::LinearBeta).is_err());
        assert!(NoiseSchedule::from_alphas(vec![], ScheduleDerivation::LinearBeta).is_err());
    }
}
