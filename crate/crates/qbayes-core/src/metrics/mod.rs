//! Evaluation metrics: RMSE against the median prediction, CRPS from
//! forecast draws, held-out pinball loss, empirical 1-Wasserstein
//! distance, and interval coverage.
//!
//! One empirical-quantile convention holds across the whole crate:
//! [`empirical_quantile`] interpolates linearly between order
//! statistics at rank `h = n·p + 0.5` (clamped to `[1, n]`), so the
//! p-quantile of `{1..100}` at `p = 0.05` is exactly 5.5.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Linear-interpolation empirical quantile at probability `p ∈ [0,1]`
/// of an ascending-sorted slice. Rank `h = n·p + 0.5` (1-based),
/// clamped to the order-statistic range.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "empirical_quantile of an empty slice");
    let n = sorted.len();
    let h = (n as f64 * p + 0.5).clamp(1.0, n as f64);
    let lo = (h.floor() as usize - 1).min(n - 1);
    let hi = (h.ceil() as usize - 1).min(n - 1);
    let frac = h - h.floor();
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Root mean squared error of (median) predictions against targets.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "rmse: {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("rmse of empty input"));
    }
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(mse.sqrt())
}

/// Sample CRPS of a forecast ensemble against a scalar observation:
/// `E|X − y| − ½·E|X − X′|` with the expectation over all ordered
/// draw pairs (diagonal included).
///
/// Computed exactly at any ensemble size: after sorting,
/// `Σ_{i,j} |x_i − x_j| = 2·Σ_i (2i − n + 1)·x_(i)`, so the all-pairs
/// term costs O(n log n) rather than O(n²) and no subsampling is ever
/// needed.
pub fn crps_from_samples(draws: &[f64], y: f64) -> Result<f64> {
    let n = draws.len();
    if n < 2 {
        return Err(Error::invalid(format!("CRPS needs ≥ 2 draws, got {n}")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("CRPS draws must not contain NaN"));
    let term1 = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / n as f64;
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - n as f64 + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    let term2 = pair_sum / (n as f64 * n as f64);
    Ok(term1 - 0.5 * term2)
}

/// Empirical 1-Wasserstein distance between two sample sets.
///
/// Equal counts: mean absolute difference of sorted samples. Unequal
/// counts: both empirical quantile functions are evaluated at the
/// midpoints `(i + ½)/G` of a common grid with `G = max(m, n)` —
/// deterministic, no resampling noise.
pub fn w1_distance(samples_u: &[f64], samples_v: &[f64]) -> Result<f64> {
    if samples_u.is_empty() || samples_v.is_empty() {
        return Err(Error::invalid("w1_distance of empty sample set"));
    }
    let mut u = samples_u.to_vec();
    let mut v = samples_v.to_vec();
    u.sort_by(|a, b| a.partial_cmp(b).expect("W1 samples must not contain NaN"));
    v.sort_by(|a, b| a.partial_cmp(b).expect("W1 samples must not contain NaN"));
    if u.len() == v.len() {
        let n = u.len() as f64;
        return Ok(u.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum::<f64>() / n);
    }
    let g = u.len().max(v.len());
    let at = |s: &[f64], p: f64| s[((p * s.len() as f64) as usize).min(s.len() - 1)];
    let mut total = 0.0;
    for i in 0..g {
        let p = (i as f64 + 0.5) / g as f64;
        total += (at(&u, p) - at(&v, p)).abs();
    }
    Ok(total / g as f64)
}

/// The pinball (check) loss `ρ_τ(u) = max(τu, (τ − 1)u)` at residual
/// `u = target − prediction`.
pub fn pinball_loss(residual: f64, tau: f64) -> f64 {
    (tau * residual).max((tau - 1.0) * residual)
}

/// Mean pinball loss of per-record predictions at one level.
pub fn mean_pinball(predictions: &[f64], targets: &[f64], tau: f64) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "mean_pinball: {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("mean_pinball of empty input"));
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| pinball_loss(t - p, tau))
        .sum::<f64>()
        / predictions.len() as f64)
}

/// Held-out mean pinball loss at each requested level.
/// `predict(x, τ)` evaluates the model's τ-quantile at input `x`.
pub fn pinball_report(
    predict: impl Fn(&[f64], f64) -> f64,
    inputs: &[Vec<f64>],
    targets: &[f64],
    levels: &[f64],
) -> Result<Vec<LevelValue>> {
    if inputs.is_empty() {
        return Err(Error::invalid("pinball_report on empty test set"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "pinball_report: {} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    levels
        .iter()
        .map(|&tau| {
            let preds: Vec<f64> = inputs.iter().map(|x| predict(x, tau)).collect();
            Ok(LevelValue { level: tau, value: mean_pinball(&preds, targets, tau)? })
        })
        .collect()
}

/// Fraction of truths lying inside their intervals (inclusive).
pub fn coverage(intervals: &[(f64, f64)], truths: &[f64]) -> Result<f64> {
    if intervals.len() != truths.len() {
        return Err(Error::ShapeMismatch(format!(
            "coverage: {} intervals vs {} truths",
            intervals.len(),
            truths.len()
        )));
    }
    if intervals.is_empty() {
        return Err(Error::invalid("coverage of empty input"));
    }
    let hits = intervals
        .iter()
        .zip(truths)
        .filter(|((lo, hi), t)| *lo <= **t && **t <= *hi)
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

/// One (level, value) entry of a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelValue {
    pub level: f64,
    pub value: f64,
}

/// Aggregated evaluation report, serialized as JSON by the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    /// Mean per-observation CRPS over the evaluated set.
    pub crps: f64,
    pub pinball: Vec<LevelValue>,
    /// Present when a reference sampler exists to compare against.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w1: Option<f64>,
    pub coverage: Vec<LevelValue>,
    pub n_records: usize,
    /// Echo of the evaluation configuration for provenance.
    pub config: serde_json::Value,
}

/// One row of the plot-ready residual export.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResidualRow {
    pub index: usize,
    pub predicted_median: f64,
    pub interval_lo: f64,
    pub interval_hi: f64,
    pub truth: f64,
}

/// Write the per-observation residual CSV (predicted median, interval
/// bounds, truth) used for interval plots.
pub fn write_residual_csv(path: &Path, rows: &[ResidualRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "predicted_median", "interval_lo", "interval_hi", "truth"])?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            r.predicted_median.to_string(),
            r.interval_lo.to_string(),
            r.interval_hi.to_string(),
            r.truth.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "ols_slope needs paired data");
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
