//! Empirical Monte-Carlo estimators and their confidence intervals.
//!
//! The variance estimator deliberately divides by `M`, not `M - 1`:
//!
//! ```text
//! E_M(Z)   = (1/M) Σ Z_m
//! Var_M(Z) = E_M((Z - E_M(Z))²)
//! Cov_M(X;Y) = (1/M) Σ X_m Y_m - E_M(X) E_M(Y)
//! ```
//!
//! The covariance is evaluated in the algebraically identical centered form
//! `(1/M) Σ (X_m - E_M X)(Y_m - E_M Y)`, so that `Cov_M(x, x)` equals
//! `Var_M(x)` bit for bit and the result is stable for strongly offset
//! samples.
//!
//! All estimators are pure functions over immutable sample buffers.

use crate::error::{Error, Result};

/// Default two-sided 95% confidence quantile.
pub const DEFAULT_QUANTILE: f64 = 1.96;

/// Mean, empirical variance and CLT half-width of one estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorReport {
    pub mean: f64,
    /// Divide-by-M empirical variance; never negative.
    pub variance: f64,
    /// `quantile * sqrt(variance / m)`.
    pub half_width: f64,
    /// Replicate count.
    pub m: usize,
}

/// `E_M`: the empirical mean.
pub fn empirical_mean(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// `Var_M`: the divide-by-M empirical variance.
pub fn empirical_var(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let mean = empirical_mean(samples)?;
    let m = samples.len() as f64;
    Ok(samples.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / m)
}

/// `Cov_M`: the empirical covariance, in centered form.
pub fn empirical_cov(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::NoSamples);
    }
    let mx = empirical_mean(x)?;
    let my = empirical_mean(y)?;
    let m = x.len() as f64;
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / m)
}

/// Builds the full report for one sample set at confidence quantile `a`.
pub fn confidence_interval(samples: &[f64], quantile: f64) -> Result<EstimatorReport> {
    if quantile <= 0.0 {
        return Err(Error::invalid(format!(
            "confidence quantile must be positive, got {quantile}"
        )));
    }
    let mean = empirical_mean(samples)?;
    let variance = empirical_var(samples)?;
    let m = samples.len();
    Ok(EstimatorReport {
        mean,
        variance,
        half_width: quantile * (variance / m as f64).sqrt(),
        m,
    })
}
