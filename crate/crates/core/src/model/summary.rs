//! Posterior summaries of scalar quantities.

use serde::{Deserialize, Serialize};

use crate::error::{CodaError, Result};

/// Minimum number of draws accepted by [`summarize`].
pub const MIN_SUMMARY_DRAWS: usize = 100;

/// Mean, median and 95% equal-tailed credible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// The interval excludes zero.
    pub significant: bool,
}

/// Empirical quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(draws: &[f64]) -> Result<PosteriorSummary> {
    if draws.len() < MIN_SUMMARY_DRAWS {
        return Err(CodaError::TooFewDraws {
            needed: MIN_SUMMARY_DRAWS,
            have: draws.len(),
        });
    }
    if let Some(v) = draws.iter().find(|v| !v.is_finite()) {
        return Err(CodaError::InvalidValue(format!("draw {v} is not finite")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    // constant draws: report the value itself, free of rounding in the sum
    let mean = if sorted[0] == sorted[sorted.len() - 1] { sorted[0] } else { mean };
    let ci_low = quantile_sorted(&sorted, 0.025);
    let ci_high = quantile_sorted(&sorted, 0.975);
    Ok(PosteriorSummary {
        mean,
        median: quantile_sorted(&sorted, 0.5),
        ci_low,
        ci_high,
        significant: ci_low > 0.0 || ci_high < 0.0,
    })
}
