//! Posterior access through a trained quantile map.
//!
//! Once `H(y, τ) ≈ F⁻¹_{θ|y}(τ)` is trained, the posterior at an
//! observation is sampled by pushing fresh uniforms through the net:
//! `θ^(m) = H(y_obs, τ_m)`, `τ_m ~ U(0,1)` — no densities, no chain.
//! When a summary net is supplied the input is `S(y_obs)` instead of
//! the raw observation.
//!
//! Three consumers of the same map live here:
//!
//! * [`sample_posterior`] / [`sorted_posterior_pairs`] — draw sets,
//!   the sorted variant doubling as a τ-monotonicity diagnostic;
//! * [`credible_interval`] — empirical central intervals per θ
//!   coordinate (shared quantile convention from [`crate::metrics`]);
//! * [`posterior_functional`] — `E[f(θ)|y]` by the trapezoidal rule
//!   over ordered uniforms applied to the net's quantile curve.
//!
//! Everything is a pure function of `(model, seed)`; a frozen net can
//! be evaluated from many threads at once.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::Error;
use crate::functional::{trapezoid_over_nodes, Transform, DEFAULT_CLIP_DELTA};
use crate::metrics::empirical_quantile;
use crate::nets::{QuantileNet, SummaryNet};
use crate::rng::SeedTree;
use crate::sim::ForwardModel;
use crate::Result;

use rand::Rng;

/// A set of posterior draws from one observation.
#[derive(Debug, Clone)]
pub struct PosteriorSampleSet {
    /// One row per draw, one column per θ coordinate.
    pub draws: Vec<Vec<f64>>,
    /// The τ base draws, paired with `draws` by index.
    pub taus: Vec<f64>,
    /// The net input that produced the draws: `y_obs` itself, or
    /// `S(y_obs)` when a summary net was used.
    pub input: Vec<f64>,
    /// Whether `taus` (and therefore `draws`) are in ascending τ order.
    pub sorted: bool,
    /// For sorted sets: adjacent draw pairs where some θ coordinate
    /// decreases — 0 for an exactly τ-monotone net.
    pub monotonicity_violations: Option<usize>,
}

impl PosteriorSampleSet {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn theta_dim(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    /// One θ coordinate as a column.
    pub fn column(&self, coord: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[coord]).collect()
    }

    /// Violations as a fraction of adjacent pairs (sorted sets only).
    pub fn violation_fraction(&self) -> Option<f64> {
        let v = self.monotonicity_violations?;
        if self.draws.len() < 2 {
            return Some(0.0);
        }
        Some(v as f64 / (self.draws.len() - 1) as f64)
    }
}

/// Map the observation to the net input, applying the summary net
/// when present and checking widths either way.
fn net_input(
    net: &QuantileNet,
    summary: Option<&SummaryNet>,
    y_obs: &[f64],
) -> Result<Vec<f64>> {
    let x = match summary {
        Some(s) => s.predict(&[y_obs.to_vec()])?.remove(0),
        None => y_obs.to_vec(),
    };
    if x.len() != net.arch.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "posterior input width {} does not match net input width {}",
            x.len(),
            net.arch.input_dim
        )));
    }
    Ok(x)
}

fn draw_taus(m: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeedTree::new(seed).child("posterior").stream("tau", 0);
    (0..m).map(|_| rng.gen()).collect()
}

fn evaluate(net: &QuantileNet, x: &[f64], taus: &[f64]) -> Result<Vec<Vec<f64>>> {
    let xs: Vec<Vec<f64>> = vec![x.to_vec(); taus.len()];
    net.predict(&xs, taus)
}

/// M posterior draws `H(x, τ_m)` with fresh i.i.d. uniform τ.
pub fn sample_posterior(
    net: &QuantileNet,
    summary: Option<&SummaryNet>,
    y_obs: &[f64],
    m: usize,
    seed: u64,
) -> Result<PosteriorSampleSet> {
    if m == 0 {
        return Err(Error::invalid("posterior sampling needs M ≥ 1 draws"));
    }
    let x = net_input(net, summary, y_obs)?;
    let taus = draw_taus(m, seed);
    let draws = evaluate(net, &x, &taus)?;
    Ok(PosteriorSampleSet {
        draws,
        taus,
        input: x,
        sorted: false,
        monotonicity_violations: None,
    })
}

/// Like [`sample_posterior`] but with the τ draws sorted ascending
/// before evaluation, so a τ-monotone net yields nondecreasing draws.
/// Adjacent decreases are counted as a monotonicity diagnostic; the
/// draw multiset is identical to the unsorted variant at the same
/// seed.
pub fn sorted_posterior_pairs(
    net: &QuantileNet,
    summary: Option<&SummaryNet>,
    y_obs: &[f64],
    m: usize,
    seed: u64,
) -> Result<PosteriorSampleSet> {
    if m == 0 {
        return Err(Error::invalid("posterior sampling needs M ≥ 1 draws"));
    }
    let x = net_input(net, summary, y_obs)?;
    let mut taus = draw_taus(m, seed);
    taus.sort_by(f64::total_cmp);
    let draws = evaluate(net, &x, &taus)?;
    let violations = draws
        .windows(2)
        .filter(|w| w[0].iter().zip(&w[1]).any(|(a, b)| b < a))
        .count();
    Ok(PosteriorSampleSet {
        draws,
        taus,
        input: x,
        sorted: true,
        monotonicity_violations: Some(violations),
    })
}

/// Central credible interval per θ coordinate: the empirical
/// `(1−level)/2` and `(1+level)/2` quantiles of the draws.
pub fn credible_interval(
    samples: &PosteriorSampleSet,
    level: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::invalid(format!(
            "interval level must lie in (0,1), got {level}"
        )));
    }
    if samples.len() < 10 {
        return Err(Error::invalid(format!(
            "credible interval needs at least 10 draws, got {}",
            samples.len()
        )));
    }
    let lo_p = (1.0 - level) / 2.0;
    let hi_p = (1.0 + level) / 2.0;
    (0..samples.theta_dim())
        .map(|c| {
            let mut col = samples.column(c);
            col.sort_by(f64::total_cmp);
            Ok((empirical_quantile(&col, lo_p), empirical_quantile(&col, hi_p)))
        })
        .collect()
}

/// `E[f(θ_c)|y]` per coordinate `c` by the trapezoidal rule over `n`
/// ordered uniform nodes, with the net's quantile curve as `Q`.
/// Endpoint nodes are clipped to `[δ, 1−δ]` (δ = [`DEFAULT_CLIP_DELTA`]).
pub fn posterior_functional(
    net: &QuantileNet,
    summary: Option<&SummaryNet>,
    y_obs: &[f64],
    f: &Transform,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("posterior functional needs n ≥ 1 nodes"));
    }
    let x = net_input(net, summary, y_obs)?;

    // Sorted uniform nodes with 0/1 endpoints, shared by every coordinate.
    let mut nodes = draw_taus(n, seed);
    nodes.sort_by(f64::total_cmp);
    nodes.insert(0, 0.0);
    nodes.push(1.0);

    // One batched net evaluation at the clipped nodes, then the
    // quadrature reads from the cached curve.
    let clipped: Vec<f64> = nodes
        .iter()
        .map(|u| u.clamp(DEFAULT_CLIP_DELTA, 1.0 - DEFAULT_CLIP_DELTA))
        .collect();
    let curve = evaluate(net, &x, &clipped)?;

    (0..net.arch.output_dim)
        .map(|c| {
            let q = |u: f64| {
                // Nodes arrive in order; binary-search the cached curve.
                let i = clipped.partition_point(|&v| v < u).min(clipped.len() - 1);
                curve[i][c]
            };
            trapezoid_over_nodes(q, f, &nodes, DEFAULT_CLIP_DELTA)
        })
        .collect()
}

/// Fraction of simulated `(θ*, y*)` pairs whose true θ lands in the
/// net's `level` credible interval, per θ coordinate. This is the
/// calibration check: a well-trained map covers at rate ≈ `level`.
pub fn interval_coverage(
    net: &QuantileNet,
    summary: Option<&SummaryNet>,
    model: &ForwardModel,
    n_pairs: usize,
    m_draws: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_pairs == 0 {
        return Err(Error::invalid("coverage needs at least one simulated pair"));
    }
    let tree = SeedTree::new(seed).child("coverage");
    let k = model.theta_dim;
    let mut hits = vec![0usize; k];
    for i in 0..n_pairs {
        let mut rng = tree.stream("pair", i as u64);
        let (theta, y, _) = model.draw_joint(&mut rng);
        let samples = sample_posterior(net, summary, &y, m_draws, tree.leaf("draws", i as u64))?;
        let intervals = credible_interval(&samples, level)?;
        for (c, (lo, hi)) in intervals.iter().enumerate() {
            if *lo <= theta[c] && theta[c] <= *hi {
                hits[c] += 1;
            }
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / n_pairs as f64).collect())
}

/// JSON-facing posterior summary: moments, standard quantiles, a
/// central interval, and trapezoid functional estimates.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSummary {
    pub n_draws: usize,
    /// Sample mean per coordinate.
    pub mean: Vec<f64>,
    /// Sample variance per coordinate.
    pub variance: Vec<f64>,
    /// Empirical quantiles per coordinate, keyed by level.
    pub quantiles: BTreeMap<String, Vec<f64>>,
    pub interval_level: f64,
    /// Central credible interval per coordinate as `[lo, hi]`.
    pub interval: Vec<(f64, f64)>,
    /// Trapezoid estimates of `E[θ]` per coordinate.
    pub functional_mean: Vec<f64>,
    /// Trapezoid estimates of `Var[θ] = E[θ²] − E[θ]²` per coordinate.
    pub functional_variance: Vec<f64>,
}

/// Summarize a draw set, adding trapezoid functional estimates
/// computed from the same net at `n_nodes` fresh ordered uniforms.
pub fn summarize_posterior(
    net: &QuantileNet,
    samples: &PosteriorSampleSet,
    interval_level: f64,
    n_nodes: usize,
    seed: u64,
) -> Result<PosteriorSummary> {
    let k = samples.theta_dim();
    let n = samples.len();
    if n == 0 {
        return Err(Error::invalid("cannot summarize an empty draw set"));
    }

    let mut mean = vec![0.0; k];
    let mut variance = vec![0.0; k];
    let mut quantiles: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for c in 0..k {
        let mut col = samples.column(c);
        let mu = col.iter().sum::<f64>() / n as f64;
        mean[c] = mu;
        variance[c] = col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
        col.sort_by(f64::total_cmp);
        for p in [0.05, 0.5, 0.95] {
            quantiles
                .entry(p.to_string())
                .or_insert_with(|| vec![0.0; k])[c] = empirical_quantile(&col, p);
        }
    }
    let interval = credible_interval(samples, interval_level)?;

    let functional_mean =
        posterior_functional(net, None, &samples.input, &Transform::Identity, n_nodes, seed)?;
    let second_moment =
        posterior_functional(net, None, &samples.input, &Transform::Square, n_nodes, seed)?;
    let functional_variance: Vec<f64> = second_moment
        .iter()
        .zip(&functional_mean)
        .map(|(m2, m1)| m2 - m1 * m1)
        .collect();

    Ok(PosteriorSummary {
        n_draws: n,
        mean,
        variance,
        quantiles,
        interval_level,
        interval,
        functional_mean,
        functional_variance,
    })
}

/// Write a draw set as CSV: `tau, theta_0, theta_1, …`.
pub fn write_sample_csv(samples: &PosteriorSampleSet, path: &Path) -> Result<()> {
    let k = samples.theta_dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["tau".to_string()];
    header.extend((0..k).map(|c| format!("theta_{c}")));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(k + 1);
    for (tau, draw) in samples.taus.iter().zip(&samples.draws) {
        row.clear();
        row.push(tau.to_string());
        row.extend(draw.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the JSON summary next to the draws.
pub fn write_summary_json(summary: &PosteriorSummary, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(summary)?)?;
    Ok(())
}
