//! The run configuration: one JSON file drives a whole pipeline.
//!
//! Every subcommand reads the same [`RunConfig`]; each uses only the
//! sections it needs. Command-line flags override file values
//! (precedence: flag > config file > built-in default), and a config
//! file is optional — with no `--config` the defaults describe a
//! small normal-normal run.
//!
//! The file carries a `version` field so later schema changes can be
//! detected instead of silently misread. Unknown keys are rejected
//! for the same reason.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qbayes_core::nets::{Activation, LrDrop};
use qbayes_core::sim::builtin_by_name;
use qbayes_core::{Error, Result};

/// Schema version this binary reads and writes.
pub const CONFIG_VERSION: u32 = 1;

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Single top-level seed; every stage derives its own stream from
    /// it, so a full pipeline is one-seed reproducible.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Worker cap for simulation-parallel stages; `null` uses all
    /// cores. Never affects results, only wall time.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub evaluation: EvalSpec,
    #[serde(default)]
    pub abc: AbcSpec,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            out_dir: default_out_dir(),
            threads: None,
            model: ModelSpec::default(),
            dataset: DatasetSpec::default(),
            network: NetworkSpec::default(),
            loss: LossSpec::default(),
            training: TrainingSpec::default(),
            evaluation: EvalSpec::default(),
            abc: AbcSpec::default(),
        }
    }
}

/// Data source: a built-in forward model, or a satellite-drag CSV
/// export that is split into train/test instead of simulated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Built-in model name (see `builtin_by_name` for the list).
    #[serde(default = "default_model_name")]
    pub name: String,
    /// Model parameters as free-form JSON; missing keys take the
    /// model's documented defaults.
    #[serde(default)]
    pub params: serde_json::Value,
    /// When set, `simulate` ingests this file instead of drawing from
    /// a prior.
    #[serde(default)]
    pub satellite_csv: Option<PathBuf>,
    /// Fraction of satellite rows that go to the training split.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_model_name() -> String {
    "normal-normal".into()
}

fn default_train_fraction() -> f64 {
    0.2
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            name: default_model_name(),
            params: serde_json::Value::Object(Default::default()),
            satellite_csv: None,
            train_fraction: default_train_fraction(),
        }
    }
}

/// Where the training triples live and how many to draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default = "default_n_records")]
    pub n_records: usize,
    /// Dataset CSV path; defaults to `<out_dir>/dataset.csv`.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_n_records() -> usize {
    10_000
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec { n_records: default_n_records(), path: None }
    }
}

/// Which network family to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    /// Implicit quantile network over (y, τ).
    Implicit,
    /// Fixed-level multi-head net.
    Explicit,
    /// Summary regression net S(y) ≈ E[θ|y].
    Summary,
}

/// Architecture selection: a named preset plus targeted overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "default_net_kind")]
    pub kind: NetKind,
    /// `small` or `traffic`.
    #[serde(default = "default_preset")]
    pub preset: String,
    /// Overrides the preset's activation for ψ/g/trunk stacks (the
    /// cosine embedding always applies ReLU).
    #[serde(default)]
    pub activation: Option<Activation>,
    /// Head levels for explicit nets.
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    /// Hidden widths for summary nets.
    #[serde(default = "default_summary_hidden")]
    pub hidden: Vec<usize>,
}

fn default_net_kind() -> NetKind {
    NetKind::Implicit
}

fn default_preset() -> String {
    "small".into()
}

fn default_levels() -> Vec<f64> {
    vec![0.05, 0.5, 0.95]
}

fn default_summary_hidden() -> Vec<usize> {
    vec![64, 32]
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            kind: default_net_kind(),
            preset: default_preset(),
            activation: None,
            levels: default_levels(),
            hidden: default_summary_hidden(),
        }
    }
}

/// Loss weights. The crossing penalty defaults by network kind (0 for
/// implicit, 1 for explicit) when left `null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
}

fn default_alpha() -> f64 {
    1.0
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec { alpha: default_alpha(), lambda: None }
    }
}

/// Optimization schedule. Defaults mirror the reference schedule:
/// batch 2048, 200 epochs, Adam 1e−3 with staged decays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_lr_drops")]
    pub lr_drops: Vec<LrDrop>,
}

fn default_epochs() -> usize {
    200
}

fn default_batch_size() -> usize {
    2048
}

fn default_learning_rate() -> f64 {
    1e-3
}

fn default_lr_drops() -> Vec<LrDrop> {
    vec![LrDrop { epoch: 140, lr: 1e-4 }, LrDrop { epoch: 180, lr: 1e-5 }]
}

impl Default for TrainingSpec {
    fn default() -> Self {
        TrainingSpec {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            lr_drops: default_lr_drops(),
        }
    }
}

/// Posterior-evaluation settings shared by `sample`, `evaluate`, and
/// `functional`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// The observation to condition on (`sample`, `functional`,
    /// `abc-compare`).
    #[serde(default)]
    pub y_obs: Vec<f64>,
    /// Credible-interval levels; the first one drives the residual
    /// export.
    #[serde(default = "default_eval_levels")]
    pub levels: Vec<f64>,
    /// Posterior draws per observation for `sample`.
    #[serde(default = "default_m_draws")]
    pub m_draws: usize,
    /// Draws per test record for the CRPS column of `evaluate` (kept
    /// smaller than `m_draws`: it multiplies the test-set size).
    #[serde(default = "default_crps_draws")]
    pub crps_draws: usize,
    /// Interior quadrature nodes for `functional`.
    #[serde(default = "default_n_nodes")]
    pub n_nodes: usize,
    /// Transform for `functional`: `identity`, `square`, or
    /// `indicator:<t>`.
    #[serde(default = "default_transform")]
    pub transform: String,
}

fn default_eval_levels() -> Vec<f64> {
    vec![0.9]
}

fn default_m_draws() -> usize {
    10_000
}

fn default_crps_draws() -> usize {
    128
}

fn default_n_nodes() -> usize {
    1_000
}

fn default_transform() -> String {
    "identity".into()
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            y_obs: vec![],
            levels: default_eval_levels(),
            m_draws: default_m_draws(),
            crps_draws: default_crps_draws(),
            n_nodes: default_n_nodes(),
            transform: default_transform(),
        }
    }
}

/// Rejection-ABC settings for `abc-compare`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcSpec {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_budget() -> usize {
    100_000
}

impl Default for AbcSpec {
    fn default() -> Self {
        AbcSpec { epsilon: default_epsilon(), budget: default_budget() }
    }
}

impl RunConfig {
    /// Read and validate a config file. All failures here — missing
    /// file, malformed JSON, unknown keys, bad version, out-of-range
    /// values — are configuration errors (exit code 2), not I/O
    /// errors: the file is part of the invocation.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fold the global flags over the file values (flags win).
    pub fn apply_globals(
        &mut self,
        seed: Option<u64>,
        out: Option<PathBuf>,
        threads: Option<usize>,
    ) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out_dir = o;
        }
        if let Some(t) = threads {
            self.threads = Some(t);
        }
    }

    /// Resolved dataset path: explicit value or `<out_dir>/dataset.csv`.
    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.path.clone().unwrap_or_else(|| self.out_dir.join("dataset.csv"))
    }

    /// Range and existence checks over every section (commands may
    /// use any of them).
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid(format!(
                "config version {} not supported (this binary reads version {CONFIG_VERSION})",
                self.version
            )));
        }
        match &self.model.satellite_csv {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::invalid(format!(
                        "satellite_csv {} does not exist",
                        p.display()
                    )));
                }
                if !(self.model.train_fraction > 0.0 && self.model.train_fraction < 1.0) {
                    return Err(Error::invalid(format!(
                        "train_fraction must lie in (0,1), got {}",
                        self.model.train_fraction
                    )));
                }
            }
            // Resolve the builtin now so an unknown name fails at load
            // with the list of valid models.
            None => {
                builtin_by_name(&self.model.name, &self.model.params)?;
            }
        }
        if self.dataset.n_records == 0 {
            return Err(Error::invalid("dataset.n_records must be ≥ 1"));
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            return Err(Error::invalid("training epochs and batch size must be ≥ 1"));
        }
        if !(self.training.learning_rate > 0.0 && self.training.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive and finite, got {}",
                self.training.learning_rate
            )));
        }
        if self.loss.alpha < 0.0 || self.loss.lambda.is_some_and(|l| l < 0.0) {
            return Err(Error::invalid("loss weights must be nonnegative"));
        }
        for w in self.training.lr_drops.windows(2) {
            if w[1].epoch <= w[0].epoch {
                return Err(Error::invalid("lr_drops must have strictly increasing epochs"));
            }
        }
        for spec_levels in [&self.network.levels, &self.evaluation.levels] {
            if spec_levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
                return Err(Error::invalid(format!(
                    "levels must lie strictly in (0,1), got {spec_levels:?}"
                )));
            }
        }
        if self.evaluation.m_draws == 0
            || self.evaluation.crps_draws == 0
            || self.evaluation.n_nodes == 0
        {
            return Err(Error::invalid("evaluation draw and node counts must be ≥ 1"));
        }
        if !self.abc.epsilon.is_finite() || self.abc.epsilon <= 0.0 {
            return Err(Error::invalid(format!(
                "abc.epsilon must be positive, got {}",
                self.abc.epsilon
            )));
        }
        if self.abc.budget == 0 {
            return Err(Error::invalid("abc.budget must be ≥ 1"));
        }
        Ok(())
    }
}

/// FNV-1a hash of the resolved config's canonical JSON, echoed in
/// reports and sidecars so artifacts can be traced to the exact
/// configuration that produced them.
pub fn config_hash(cfg: &RunConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
