//! Simulation harness: forward models and training-triple generation.
//!
//! A [`ForwardModel`] bundles a prior `π(θ)` with a simulator
//! `θ (→ z) → y`. [`simulate_dataset`] draws the training triples
//! `(θ⁽ⁱ⁾, y⁽ⁱ⁾, τ⁽ⁱ⁾)` — parameter, simulated data, and a fresh
//! uniform base draw — that the quantile networks train on.
//!
//! Simulation shards across workers using RNG streams keyed by
//! `(seed, shard)`, with output order fixed by shard order, so a
//! dataset is a pure function of `(model, N, seed)` no matter how many
//! threads run.
//!
//! Built-in models:
//!
//! * [`builtin_normal_normal`] — the conjugate normal learning model
//!   `θ ~ N(μ, τ²)`, `y_i | θ ~ N(θ, σ²)`, with `ȳ` exposed as the
//!   exact sufficient summary;
//! * [`builtin_sinc`] — the synthetic heteroskedastic regression
//!   `x ~ U(−1,1)`, `y ~ N(sin(πx)/(πx), exp(1−x)/10)`, where the
//!   regressor plays the conditioning role;
//! * [`builtin_identity`] — deterministic `y = θ`, for tests;
//! * [`builtin_latent_normal`] — a latent-composed chain
//!   `θ → z → y`, exercising the latent-variable pathway;
//! * [`satellite::builtin_synthetic_drag`] — a smooth 7-input
//!   heteroskedastic stand-in for the satellite-drag dataset.

pub mod dataset;
pub mod satellite;

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::json;

use crate::error::Error;
use crate::rng::SeedTree;
use crate::Result;

pub use dataset::{load_dataset, save_dataset, DatasetMeta, Dims, TripleDataset};

/// How the simulator produces data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// `y | θ` is random.
    Stochastic,
    /// `y` is a pure function of `θ`.
    Deterministic,
    /// `y` arises through a latent draw `z | θ` then `y | z, θ`.
    LatentComposed,
}

/// One training record: parameter draw, simulated data, uniform base
/// draw(s), and the latent draw when the model has one.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriple {
    pub theta: Vec<f64>,
    pub y: Vec<f64>,
    pub tau: Vec<f64>,
    pub z: Option<Vec<f64>>,
}

type JointFn = dyn Fn(&mut ChaCha12Rng) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) + Send + Sync;
type PriorFn = dyn Fn(&mut ChaCha12Rng) -> Vec<f64> + Send + Sync;
type CondFn = dyn Fn(&[f64], &mut ChaCha12Rng) -> (Vec<f64>, Option<Vec<f64>>) + Send + Sync;
type SummaryFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Prior plus simulator. All built-ins are constructed through the
/// `builtin_*` functions; the closures are deterministic given the
/// RNG stream handed to them.
#[derive(Clone)]
pub struct ForwardModel {
    pub name: String,
    pub kind: ModelKind,
    /// Parameter dimension `k`.
    pub theta_dim: usize,
    /// Data dimension `n`.
    pub y_dim: usize,
    /// Latent dimension `D` (0 when the model has no latent).
    pub latent_dim: usize,
    /// Base-draw dimension `K`; defaults to `k` (one uniform per
    /// parameter coordinate).
    pub tau_dim: usize,
    /// Width of [`ForwardModel::summary`]'s output.
    pub summary_dim: usize,
    /// Descriptor echoed into dataset sidecars.
    pub params: serde_json::Value,
    joint: Arc<JointFn>,
    prior: Option<Arc<PriorFn>>,
    conditional: Option<Arc<CondFn>>,
    summary: Arc<SummaryFn>,
}

impl std::fmt::Debug for ForwardModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardModel")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("theta_dim", &self.theta_dim)
            .field("y_dim", &self.y_dim)
            .field("latent_dim", &self.latent_dim)
            .finish()
    }
}

impl ForwardModel {
    /// One joint draw `(θ, y, z)` in the model's natural factorization.
    pub fn draw_joint(&self, rng: &mut ChaCha12Rng) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        (self.joint)(rng)
    }

    /// A prior draw of `θ`, when the model factorizes as prior ×
    /// conditional (required by rejection ABC).
    pub fn draw_prior(&self, rng: &mut ChaCha12Rng) -> Result<Vec<f64>> {
        match &self.prior {
            Some(p) => Ok(p(rng)),
            None => Err(Error::invalid(format!(
                "model '{}' does not expose a prior/conditional factorization",
                self.name
            ))),
        }
    }

    /// Simulate `y | θ` (and `z` when latent), when available.
    pub fn simulate_y(&self, theta: &[f64], rng: &mut ChaCha12Rng) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        match &self.conditional {
            Some(c) => Ok(c(theta, rng)),
            None => Err(Error::invalid(format!(
                "model '{}' does not expose a conditional simulator",
                self.name
            ))),
        }
    }

    /// Dimension-reducing summary of `y`: the exact sufficient
    /// statistic where one exists (`ȳ` for normal-normal), identity
    /// otherwise.
    pub fn summary(&self, y: &[f64]) -> Vec<f64> {
        (self.summary)(y)
    }
}

/// Draw `N` i.i.d. training triples from the model. θ comes from the
/// prior, `y` from the simulator (through the latent when the model
/// composes one), and τ is i.i.d. uniform on `[0,1]^K`.
///
/// Deterministic in `(model, n, seed)`: records are generated in
/// fixed-size shards with one RNG stream per shard, concatenated in
/// shard order.
pub fn simulate_dataset(model: &ForwardModel, n: usize, seed: u64) -> Result<TripleDataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size N must be ≥ 1"));
    }
    const SHARD: usize = 4096;
    let tree = SeedTree::new(seed).child("simulate");
    let n_shards = n.div_ceil(SHARD);

    let shards: Vec<Result<Vec<TrainingTriple>>> = (0..n_shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = tree.stream("shard", s as u64);
            let lo = s * SHARD;
            let hi = usize::min(lo + SHARD, n);
            let mut out = Vec::with_capacity(hi - lo);
            for _ in lo..hi {
                let (theta, y, z) = model.draw_joint(&mut rng);
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "simulator returned non-finite y at θ = {theta:?}"
                    )));
                }
                let tau: Vec<f64> = (0..model.tau_dim).map(|_| rng.gen::<f64>()).collect();
                out.push(TrainingTriple { theta, y, tau, z });
            }
            Ok(out)
        })
        .collect();

    let mut records = Vec::with_capacity(n);
    for shard in shards {
        records.extend(shard?);
    }

    Ok(TripleDataset {
        records,
        meta: DatasetMeta {
            version: 1,
            model: json!({ "name": model.name, "params": model.params }),
            dims: dataset::Dims {
                theta: model.theta_dim,
                y: model.y_dim,
                tau: model.tau_dim,
                z: model.latent_dim,
            },
            seed,
            n_records: n,
            created: String::new(),
        },
    })
}

/// The conjugate normal learning model: `θ ~ N(μ, τ²)`,
/// `y = (y_1..y_n)` i.i.d. `N(θ, σ²)`, sufficient summary `ȳ`.
pub fn builtin_normal_normal(mu: f64, tau2: f64, sigma2: f64, n_obs: usize) -> Result<ForwardModel> {
    if tau2 <= 0.0 || sigma2 <= 0.0 {
        return Err(Error::invalid(format!(
            "variances must be positive (τ² = {tau2}, σ² = {sigma2})"
        )));
    }
    if n_obs == 0 {
        return Err(Error::invalid("n_obs must be ≥ 1"));
    }
    let (tau_sd, sigma_sd) = (tau2.sqrt(), sigma2.sqrt());
    let prior = Arc::new(move |rng: &mut ChaCha12Rng| {
        vec![mu + tau_sd * rng.sample::<f64, _>(StandardNormal)]
    });
    let conditional = Arc::new(move |theta: &[f64], rng: &mut ChaCha12Rng| {
        let y = (0..n_obs)
            .map(|_| theta[0] + sigma_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (y, None)
    });
    let p = prior.clone();
    let c = conditional.clone();
    Ok(ForwardModel {
        name: "normal-normal".into(),
        kind: ModelKind::Stochastic,
        theta_dim: 1,
        y_dim: n_obs,
        latent_dim: 0,
        tau_dim: 1,
        summary_dim: 1,
        params: json!({ "mu": mu, "tau2": tau2, "sigma2": sigma2, "n_obs": n_obs }),
        joint: Arc::new(move |rng| {
            let theta = p(rng);
            let (y, z) = c(&theta, rng);
            (theta, y, z)
        }),
        prior: Some(prior),
        conditional: Some(conditional),
        summary: Arc::new(|y| vec![y.iter().sum::<f64>() / y.len() as f64]),
    })
}

/// `sin(πx)/(πx)`, continuously extended to 1 at the origin.
pub fn sinc(x: f64) -> f64 {
    let px = std::f64::consts::PI * x;
    if px.abs() < 1e-12 {
        1.0
    } else {
        px.sin() / px
    }
}

/// Conditional noise scale of the sinc model, `sqrt(exp(1 − x)/10)`.
pub fn sinc_noise_sd(x: f64) -> f64 {
    ((1.0 - x).exp() / 10.0).sqrt()
}

/// Synthetic heteroskedastic regression: `x ~ U(−1, 1)`,
/// `y ~ N(sin(πx)/(πx), exp(1 − x)/10)`.
///
/// In triple terms the response takes the θ slot and the regressor
/// the y slot: the regressor is pure conditioning information
/// (`p(z) = δ_{z=x}`), and the network learns the quantiles of the
/// response given `x`. The closed-form quantile
/// `f_τ(x) = sin(πx)/(πx) + Φ⁻¹(τ)·sqrt(exp(1−x)/10)` lives in
/// [`crate::oracles::sinc_true_quantile`].
pub fn builtin_sinc() -> ForwardModel {
    ForwardModel {
        name: "sinc".into(),
        kind: ModelKind::Stochastic,
        theta_dim: 1,
        y_dim: 1,
        latent_dim: 0,
        tau_dim: 1,
        summary_dim: 1,
        params: json!({}),
        joint: Arc::new(|rng| {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let resp = sinc(x) + sinc_noise_sd(x) * rng.sample::<f64, _>(StandardNormal);
            (vec![resp], vec![x], None)
        }),
        prior: None,
        conditional: None,
        summary: Arc::new(|y| y.to_vec()),
    }
}

/// Deterministic test model `y = θ`, `θ ~ N(0, I_k)`.
pub fn builtin_identity(k: usize) -> ForwardModel {
    let prior = Arc::new(move |rng: &mut ChaCha12Rng| {
        (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>()
    });
    let conditional = Arc::new(move |theta: &[f64], _: &mut ChaCha12Rng| (theta.to_vec(), None));
    let p = prior.clone();
    let c = conditional.clone();
    ForwardModel {
        name: "identity".into(),
        kind: ModelKind::Deterministic,
        theta_dim: k,
        y_dim: k,
        latent_dim: 0,
        tau_dim: k,
        summary_dim: k,
        params: json!({ "k": k }),
        joint: Arc::new(move |rng| {
            let theta = p(rng);
            let (y, z) = c(&theta, rng);
            (theta, y, z)
        }),
        prior: Some(prior),
        conditional: Some(conditional),
        summary: Arc::new(|y| y.to_vec()),
    }
}

/// Latent-composed chain `θ ~ N(0,1)`, `z | θ ~ N(θ, s_z²)`,
/// `y | z ~ N(z, s_y²)`.
///
/// With `s_z = 0` the latent is degenerate (`z ≡ θ`, drawn without
/// consuming randomness), and the chain reduces exactly to the direct
/// model `y | θ ~ N(θ, s_y²)` — the property test for Algorithm 3's
/// pathway.
pub fn builtin_latent_normal(s_z: f64, s_y: f64) -> Result<ForwardModel> {
    if s_z < 0.0 || s_y <= 0.0 {
        return Err(Error::invalid("latent model needs s_z ≥ 0, s_y > 0"));
    }
    let prior = Arc::new(|rng: &mut ChaCha12Rng| vec![rng.sample::<f64, _>(StandardNormal)]);
    let conditional = Arc::new(move |theta: &[f64], rng: &mut ChaCha12Rng| {
        let z = if s_z == 0.0 {
            theta[0]
        } else {
            theta[0] + s_z * rng.sample::<f64, _>(StandardNormal)
        };
        let y = z + s_y * rng.sample::<f64, _>(StandardNormal);
        (vec![y], Some(vec![z]))
    });
    let p = prior.clone();
    let c = conditional.clone();
    Ok(ForwardModel {
        name: "latent-normal".into(),
        kind: ModelKind::LatentComposed,
        theta_dim: 1,
        y_dim: 1,
        latent_dim: 1,
        tau_dim: 1,
        summary_dim: 1,
        params: json!({ "s_z": s_z, "s_y": s_y }),
        joint: Arc::new(move |rng| {
            let theta = p(rng);
            let (y, z) = c(&theta, rng);
            (theta, y, z)
        }),
        prior: Some(prior),
        conditional: Some(conditional),
        summary: Arc::new(|y| y.to_vec()),
    })
}

/// Look up a built-in model by name with JSON parameters (the CLI's
/// model-spec entry point).
pub fn builtin_by_name(name: &str, params: &serde_json::Value) -> Result<ForwardModel> {
    let get = |key: &str, default: f64| -> f64 {
        params.get(key).and_then(|v| v.as_f64()).unwrap_or(default)
    };
    match name {
        "normal-normal" => builtin_normal_normal(
            get("mu", 0.0),
            get("tau2", 1.0),
            get("sigma2", 1.0),
            params.get("n_obs").and_then(|v| v.as_u64()).unwrap_or(5) as usize,
        ),
        "sinc" => Ok(builtin_sinc()),
        "identity" => Ok(builtin_identity(
            params.get("k").and_then(|v| v.as_u64()).unwrap_or(1) as usize,
        )),
        "latent-normal" => builtin_latent_normal(get("s_z", 0.5), get("s_y", 1.0)),
        "synthetic-drag" => Ok(satellite::builtin_synthetic_drag()),
        other => Err(Error::invalid(format!(
            "unknown builtin model '{other}'; valid: normal-normal, sinc, identity, latent-normal, synthetic-drag"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_model_copies_theta() {
        let m = builtin_identity(2);
        let ds = simulate_dataset(&m, 3, 9).unwrap();
        for r in &ds.records {
            assert_eq!(r.theta, r.y, "deterministic kind: y must equal θ");
        }
    }

    #[test]
    fn normal_normal_ybar_centers_on_prior_mean() {
        // E[ȳ] = E[θ] = μ = 0; Monte Carlo tolerance 0.02 at N = 1e5.
        let m = builtin_normal_normal(0.0, 1.0, 1.0, 5).unwrap();
        let ds = simulate_dataset(&m, 100_000, 1).unwrap();
        let mean: f64 = ds
            .records
            .iter()
            .map(|r| m.summary(&r.y)[0])
            .sum::<f64>()
            / ds.records.len() as f64;
        assert!(
            mean.abs() < 0.02,
            "FALSIFIED: sample mean of ȳ = {mean}, expected ≈ 0 within 0.02"
        );
    }

    #[test]
    fn normal_normal_prior_moments() {
        let m = builtin_normal_normal(0.0, 1.0, 1.0, 5).unwrap();
        let ds = simulate_dataset(&m, 100_000, 2).unwrap();
        let n = ds.records.len() as f64;
        let mean: f64 = ds.records.iter().map(|r| r.theta[0]).sum::<f64>() / n;
        let var: f64 = ds.records.iter().map(|r| (r.theta[0] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "prior mean ≈ μ: got {mean}");
        assert!((var - 1.0).abs() < 0.05, "prior var ≈ τ²: got {var}");
    }

    #[test]
    fn same_seed_same_dataset() {
        let m = builtin_normal_normal(0.0, 1.0, 1.0, 5).unwrap();
        let a = simulate_dataset(&m, 500, 77).unwrap();
        let b = simulate_dataset(&m, 500, 77).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(builtin_normal_normal(0.0, -1.0, 1.0, 5).is_err());
        assert!(builtin_normal_normal(0.0, 1.0, 0.0, 5).is_err());
        assert!(builtin_normal_normal(0.0, 1.0, 1.0, 0).is_err(), "n_obs = 0 rejected");
        assert!(simulate_dataset(&builtin_sinc(), 0, 1).is_err(), "N = 0 rejected");
    }

    #[test]
    fn tau_is_uniform_ks() {
        // KS statistic of the τ column against U(0,1) at N = 1e5 < 0.01.
        let m = builtin_sinc();
        let ds = simulate_dataset(&m, 100_000, 3).unwrap();
        let mut taus: Vec<f64> = ds.records.iter().map(|r| r.tau[0]).collect();
        taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = taus.len() as f64;
        let ks = taus
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let hi = (i as f64 + 1.0) / n - t;
                let lo = t - i as f64 / n;
                hi.max(lo)
            })
            .fold(0.0f64, f64::max);
        assert!(ks < 0.01, "FALSIFIED: τ KS statistic {ks} ≥ 0.01");
    }

    #[test]
    fn degenerate_latent_equals_direct_model() {
        // s_z = 0 consumes no latent randomness, so the chain replays the
        // direct normal-normal(μ=0, τ²=1, σ²=s_y², n=1) draws exactly.
        let latent = builtin_latent_normal(0.0, 0.7).unwrap();
        let direct = builtin_normal_normal(0.0, 1.0, 0.49, 1).unwrap();
        let a = simulate_dataset(&latent, 200, 5).unwrap();
        let b = simulate_dataset(&direct, 200, 5).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.theta, rb.theta);
            assert_eq!(ra.y, rb.y);
            assert_eq!(ra.z.as_deref(), Some(&ra.theta[..]), "z ≡ θ when degenerate");
        }
    }

    #[test]
    fn sinc_regressor_in_range() {
        let ds = simulate_dataset(&builtin_sinc(), 1000, 4).unwrap();
        assert!(ds.records.iter().all(|r| (-1.0..1.0).contains(&r.y[0])));
    }

    #[test]
    fn unknown_builtin_name_lists_valid_models() {
        let err = builtin_by_name("nope", &json!({})).unwrap_err().to_string();
        assert!(err.contains("normal-normal") && err.contains("sinc"));
    }
}
