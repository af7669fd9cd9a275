//! Rejection ABC with the indicator kernel — the reference competitor
//! for budget-matched comparisons.
//!
//! A proposal `(θ, y) ~ π(θ) p(y|θ)` is kept iff its summary lands
//! within ε of the observed summary:
//!
//! ```text
//! accept θ  ⟺  ‖s(y) − s(y_obs)‖ < ε
//! ```
//!
//! Distances are Euclidean on *standardized* summaries: each summary
//! coordinate is divided by its standard deviation across the whole
//! simulation budget, so one ε is meaningful across dimensions and
//! scales. The summary is either the model's own statistic or a
//! learned regression net.
//!
//! Proposals are simulated in fixed 4096-row shards (one RNG stream
//! per shard, recombined in shard order), so the accept set is
//! bit-identical at any worker count.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Error;
use crate::metrics::w1_distance;
use crate::nets::{QuantileNet, SummaryNet};
use crate::posterior::sample_posterior;
use crate::rng::SeedTree;
use crate::sim::ForwardModel;
use crate::Result;

/// Where the summary statistic comes from.
pub enum SummarySource {
    /// The model's own summary map (exact/sufficient when it has one).
    Model,
    /// A learned summary net `S(y) ≈ E[θ|y]`.
    Learned(SummaryNet),
}

/// Rejection-ABC settings.
pub struct AbcConfig {
    /// Acceptance tolerance on the standardized summary distance.
    pub epsilon: f64,
    /// Total number of prior simulations.
    pub budget: usize,
    pub summary: SummarySource,
}

impl AbcConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::invalid(format!(
                "ABC tolerance must be positive, got {}",
                self.epsilon
            )));
        }
        if self.budget == 0 {
            return Err(Error::invalid("ABC budget must be ≥ 1"));
        }
        Ok(())
    }
}

/// Accepted draws plus acceptance diagnostics.
#[derive(Debug, Clone)]
pub struct AbcSample {
    /// Accepted θ, one row per draw, in proposal order.
    pub accepted: Vec<Vec<f64>>,
    pub n_proposals: usize,
    pub acceptance_rate: f64,
    /// Smallest standardized distance seen (guides ε when nothing is
    /// accepted).
    pub min_distance: f64,
}

impl AbcSample {
    /// One θ coordinate as a column.
    pub fn column(&self, coord: usize) -> Vec<f64> {
        self.accepted.iter().map(|d| d[coord]).collect()
    }
}

const SHARD: usize = 4096;

/// Rejection ABC: simulate `budget` draws from the joint, keep those
/// whose standardized summary is within ε of the observation's.
///
/// Zero acceptances is an error carrying the minimum observed
/// distance, so the caller can pick a feasible ε.
pub fn abc_posterior(
    model: &ForwardModel,
    y_obs: &[f64],
    cfg: &AbcConfig,
    seed: u64,
) -> Result<AbcSample> {
    cfg.validate()?;
    if y_obs.len() != model.y_dim {
        return Err(Error::ShapeMismatch(format!(
            "observation width {} does not match model y width {}",
            y_obs.len(),
            model.y_dim
        )));
    }

    // Pass 1: simulate the whole budget in shard order, keeping θ and
    // the (raw) summary of each proposal.
    let tree = SeedTree::new(seed).child("abc");
    let n_shards = cfg.budget.div_ceil(SHARD);
    let shards: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..n_shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = tree.stream("shard", s as u64);
            let count = usize::min(SHARD, cfg.budget - s * SHARD);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let (theta, y, _) = model.draw_joint(&mut rng);
                let s_y = summarize(&cfg.summary, model, &y)?;
                out.push((theta, s_y));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let proposals: Vec<(Vec<f64>, Vec<f64>)> = shards.into_iter().flatten().collect();

    // Standardization constants: per-coordinate sd of the simulated
    // summaries over the budget (constant coordinates pass through).
    let d = proposals[0].1.len();
    let n = proposals.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| proposals.iter().map(|(_, s)| s[j]).sum::<f64>() / n)
        .collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let v = proposals.iter().map(|(_, s)| (s[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();

    // Pass 2: filter by standardized distance to the observed summary.
    let s_obs = summarize(&cfg.summary, model, y_obs)?;
    if s_obs.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "observed summary width {} vs simulated width {d}",
            s_obs.len()
        )));
    }
    let mut accepted = Vec::new();
    let mut min_distance = f64::INFINITY;
    for (theta, s_y) in proposals {
        let dist = s_y
            .iter()
            .zip(&s_obs)
            .zip(&sd)
            .map(|((a, b), s)| ((a - b) / s).powi(2))
            .sum::<f64>()
            .sqrt();
        min_distance = min_distance.min(dist);
        if dist < cfg.epsilon {
            accepted.push(theta);
        }
    }
    if accepted.is_empty() {
        return Err(Error::NoAcceptedDraws { min_distance });
    }
    let acceptance_rate = accepted.len() as f64 / cfg.budget as f64;
    Ok(AbcSample { accepted, n_proposals: cfg.budget, acceptance_rate, min_distance })
}

fn summarize(source: &SummarySource, model: &ForwardModel, y: &[f64]) -> Result<Vec<f64>> {
    match source {
        SummarySource::Model => Ok(model.summary(y)),
        SummarySource::Learned(net) => Ok(net.predict(&[y.to_vec()])?.remove(0)),
    }
}

/// Deterministic half of the comparison report (safe to diff across
/// runs at the same seed).
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub epsilon: f64,
    pub budget: usize,
    pub m_draws: usize,
    pub n_accepted: usize,
    pub acceptance_rate: f64,
    /// W1 between the ABC sample and the net's draws, per θ coordinate.
    pub w1_abc_vs_net: Vec<f64>,
    /// W1 of each method against the reference posterior, when one is
    /// available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w1_abc_vs_oracle: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w1_net_vs_oracle: Option<Vec<f64>>,
}

/// Wall-clock timings, reported separately so the main report stays
/// byte-stable under a fixed seed.
#[derive(Debug, Clone, Serialize)]
pub struct CompareTiming {
    pub abc_seconds: f64,
    pub net_seconds: f64,
    /// ABC wall time divided by accepted-draw count.
    pub abc_seconds_per_effective_sample: f64,
    /// Net wall time divided by M.
    pub net_seconds_per_draw: f64,
}

/// Grid size for materializing a reference posterior's quantile
/// function as "draws" for W1.
const ORACLE_GRID: usize = 8192;

/// Run both methods on the same observation and compare by W1.
///
/// `oracle_quantile`, when given, is the reference posterior's inverse
/// CDF for the first θ coordinate (closed-form models); both methods
/// are then also scored against it.
#[allow(clippy::too_many_arguments)]
pub fn budget_matched_compare(
    model: &ForwardModel,
    y_obs: &[f64],
    abc_cfg: &AbcConfig,
    net: &QuantileNet,
    summary_net: Option<&SummaryNet>,
    m_draws: usize,
    oracle_quantile: Option<&dyn Fn(f64) -> f64>,
    seed: u64,
) -> Result<(CompareReport, CompareTiming)> {
    let tree = SeedTree::new(seed);

    let t0 = Instant::now();
    let abc = abc_posterior(model, y_obs, abc_cfg, tree.leaf("abc", 0))?;
    let abc_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let net_set = sample_posterior(net, summary_net, y_obs, m_draws, tree.leaf("net", 0))?;
    let net_seconds = t1.elapsed().as_secs_f64();

    let k = net_set.theta_dim();
    if k != model.theta_dim {
        return Err(Error::ShapeMismatch(format!(
            "net outputs {k} coordinates, model has θ dimension {}",
            model.theta_dim
        )));
    }

    let w1_abc_vs_net: Vec<f64> = (0..k)
        .map(|c| w1_distance(&abc.column(c), &net_set.column(c)))
        .collect::<Result<_>>()?;

    let (w1_abc_vs_oracle, w1_net_vs_oracle) = match oracle_quantile {
        Some(q) => {
            let oracle: Vec<f64> =
                (0..ORACLE_GRID).map(|i| q((i as f64 + 0.5) / ORACLE_GRID as f64)).collect();
            (
                Some(vec![w1_distance(&abc.column(0), &oracle)?]),
                Some(vec![w1_distance(&net_set.column(0), &oracle)?]),
            )
        }
        None => (None, None),
    };

    let report = CompareReport {
        epsilon: abc_cfg.epsilon,
        budget: abc_cfg.budget,
        m_draws,
        n_accepted: abc.accepted.len(),
        acceptance_rate: abc.acceptance_rate,
        w1_abc_vs_net,
        w1_abc_vs_oracle,
        w1_net_vs_oracle,
    };
    let timing = CompareTiming {
        abc_seconds,
        net_seconds,
        abc_seconds_per_effective_sample: abc_seconds / abc.accepted.len() as f64,
        net_seconds_per_draw: net_seconds / m_draws as f64,
    };
    Ok((report, timing))
}

/// Write the accepted draws as CSV: `theta_0, theta_1, …`.
pub fn write_accepted_csv(sample: &AbcSample, path: &Path) -> Result<()> {
    let k = sample.accepted.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..k).map(|c| format!("theta_{c}")))?;
    let mut row: Vec<String> = Vec::with_capacity(k);
    for draw in &sample.accepted {
        row.clear();
        row.extend(draw.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
