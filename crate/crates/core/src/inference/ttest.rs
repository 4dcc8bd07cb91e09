use statrs::distribution::ContinuousCDF;

use super::excursion::{std_normal, Direction};
use crate::em::FitResult;
use crate::error::{Error, Result};

/// Locations with `(mean - gamma) / sd > z_{1 - alpha / V}` (mirrored for
/// the negative direction). Zero SDs compare the mean with `gamma` directly.
pub fn bonferroni_mask(mean: &[f64], sd: &[f64], gamma: f64, alpha: f64, direction: Direction) -> Result<Vec<bool>> {
    if mean.len() != sd.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            got: sd.len(),
            context: "mean and SD maps",
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let v = mean.len().max(1);
    let crit = std_normal().inverse_cdf(1.0 - alpha / v as f64);
    Ok(mean
        .iter()
        .zip(sd)
        .map(|(&m, &s)| {
            let diff = match direction {
                Direction::Positive => m - gamma,
                Direction::Negative => gamma - m,
            };
            if s > 0.0 {
                diff / s > crit
            } else {
                diff > 0.0
            }
        })
        .collect())
}

/// [`bonferroni_mask`] on IC `ic` of a fit.
pub fn ttest_engagement(fit: &FitResult, ic: usize, gamma: f64, alpha: f64, direction: Direction) -> Result<Vec<bool>> {
    if ic >= fit.subject_ics.nrows() {
        return Err(Error::InvalidArgument(format!("IC {ic} out of range")));
    }
    let mean: Vec<f64> = fit.subject_ics.row(ic).iter().copied().collect();
    let sd: Vec<f64> = fit.marginal_sd.row(ic).iter().copied().collect();
    bonferroni_mask(&mean, &sd, gamma, alpha, direction)
}
