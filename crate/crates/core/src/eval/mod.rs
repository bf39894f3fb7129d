//! Detection metrics, threshold calibration, Fréchet distance, image quality
//! and report aggregation.

pub mod features;
pub mod frechet;
pub mod plot;
pub mod quality;
pub mod report;

pub use features::{FeatureExtractor, RandomPatchEmbedding};
pub use frechet::{frechet_distance, FrechetStats};
pub use quality::{psnr, ssim};
pub use report::{evaluate_grid, Cell, Condition, EvalReport, GridContext, SchemeSetup, ScoreSample, Threshold};

pub use crate::watermark::bit_accuracy;

use crate::error::{Error, Result};

pub const MIN_NULL_SCORES: usize = 100;

/// Empirical `(1 - fpr)` quantile of the null scores, rounding up to the next
/// order statistic, so that the fraction of nulls strictly above it is at
/// most `fpr`.
pub fn calibrate_threshold(null_scores: &[f64], fpr: f64) -> Result<f64> {
    if null_scores.len() < MIN_NULL_SCORES {
        return Err(Error::TooFewSamples {
            minimum: MIN_NULL_SCORES,
            got: null_scores.len(),
        });
    }
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::invalid(format!("fpr must be in (0, 1), got {fpr}")));
    }
    if let Some(bad) = null_scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("null score {bad} is not finite")));
    }
    let mut sorted = null_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = (((n - 1) as f64) * (1.0 - fpr)).ceil() as usize;
    Ok(sorted[k.min(n - 1)])
}

/// Fraction of scores strictly above `threshold`.
pub fn tpr_at_fpr(marked_scores: &[f64], threshold: f64) -> Result<f64> {
    if marked_scores.is_empty() {
        return Err(Error::invalid("no marked scores"));
    }
    Ok(marked_scores.iter().filter(|s| **s > threshold).count() as f64 / marked_scores.len() as f64)
}

/// Mean and normal-approximation 95% half-width.
pub fn mean_ci95(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((m, 0.0));
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    Some((m, 1.96 * (var / n).sqrt()))
}
