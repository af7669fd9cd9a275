//! Quantile network architectures and losses.
//!
//! Three network families share one tape-based forward implementation:
//!
//! * [`QuantileNet`] — the implicit quantile network
//!   `F⁻¹(τ, y) = g(ψ(y) ∘ φ(τ))`: a feed-forward stack ψ over the
//!   data (or its summary), a cosine embedding φ over the quantile
//!   level, an elementwise product, and a feed-forward head g;
//! * [`ExplicitQuantileNet`] — a shared trunk over `y` with K output
//!   heads, one per fixed level `τ_1 < … < τ_K`;
//! * [`SummaryNet`] — a plain regression stack whose output
//!   approximates the posterior mean `E[θ|y]`, used as the learned
//!   summary statistic `S(y)`.
//!
//! Losses: the IQN trains on the combined objective
//! `α · mean ρ_τ(θ − f(τ, y)) + mean (θ − f(0.5, y))²` — the source
//! formulation leaves the MSE term's prediction unspecified (its
//! `f(x_i, θ)` carries no τ), so this crate evaluates it at the
//! median, `τ = 0.5`, which keeps the term well-defined and centers
//! the median head. Explicit nets train on the multi-quantile pinball
//! mean `(1/NK) Σ_i Σ_k ρ_{τ_k}` plus `λ ·` a non-crossing hinge
//! `Σ_{i<j} max(0, f_{τ_i} − f_{τ_j})` per record. Defaults: `α = 1`;
//! `λ = 0` for IQNs (monotonicity is handled by inference-time
//! sorting and a violation diagnostic), `λ = 1` for explicit nets.
//!
//! Inputs are standardized to zero mean / unit variance per column
//! using training-set statistics stored with the model — unscaled
//! inputs stall Adam when columns live on wildly different scales
//! (velocity ~10³ next to accommodation coefficients ~1).

pub mod checkpoint;
pub mod gradcheck;
pub mod train;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::Error;
use crate::rng::SeedTree;
use crate::Result;

pub use crate::metrics::pinball_loss;
pub use checkpoint::{load_checkpoint, save_checkpoint, AnyNet, Checkpoint};
pub use train::{train, train_resume, fit_summary, LrDrop, TrainConfig, TrainReport};

/// Activation for ψ, g, trunk, and summary stacks. The cosine
/// embedding φ always applies ReLU — its output is nonnegative by
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Per-column affine input scaling, fit on training data and stored
/// with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// No-op scaling (used before a net has seen training data).
    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], sd: vec![1.0; dim] }
    }

    /// Column means and standard deviations of the rows; constant
    /// columns get sd 1 so they pass through unscaled.
    pub fn fit(rows: &Array2<f64>) -> Self {
        let n = rows.nrows() as f64;
        let mean: Vec<f64> = rows.columns().into_iter().map(|c| c.sum() / n).collect();
        let sd: Vec<f64> = rows
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, m)| {
                let v = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, sd }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardize a row-major batch in place.
    pub fn apply(&self, rows: &mut Array2<f64>) {
        assert_eq!(rows.ncols(), self.dim(), "standardizer width mismatch");
        for (j, mut col) in rows.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|x| (x - self.mean[j]) / self.sd[j]);
        }
    }
}

/// Loss weights and (for explicit nets) quantile levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the pinball term in the combined loss.
    pub alpha: f64,
    /// Weight of the non-crossing hinge penalty.
    pub lambda: f64,
    /// Head levels for explicit nets; strictly increasing in (0,1).
    pub levels: Vec<f64>,
}

impl LossConfig {
    pub fn implicit_default() -> Self {
        LossConfig { alpha: 1.0, lambda: 0.0, levels: vec![] }
    }

    pub fn explicit_default(levels: Vec<f64>) -> Self {
        LossConfig { alpha: 1.0, lambda: 1.0, levels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.lambda < 0.0 {
            return Err(Error::invalid(format!(
                "loss weights must be nonnegative (α = {}, λ = {})",
                self.alpha, self.lambda
            )));
        }
        for pair in self.levels.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::invalid(format!(
                    "quantile levels must be strictly increasing, got {:?}",
                    self.levels
                )));
            }
        }
        if self.levels.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::invalid(format!(
                "quantile levels must lie in (0,1), got {:?}",
                self.levels
            )));
        }
        Ok(())
    }
}

/// The cosine embedding `φ_j(τ) = ReLU(Σ_{i=0}^{n−1} cos(πiτ)·w_ij + b_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineEmbedding {
    pub n_frequencies: usize,
    /// `(n_frequencies, output_width)` weight matrix.
    pub weights: Tensor,
    /// `(1, output_width)` bias row.
    pub biases: Tensor,
}

impl CosineEmbedding {
    pub fn new(weights: Tensor, biases: Tensor) -> Result<Self> {
        if biases.nrows() != 1 || weights.ncols() != biases.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "cosine embedding wants weights (n, out) and biases (1, out); got {:?} and {:?}",
                weights.dim(),
                biases.dim()
            )));
        }
        Ok(CosineEmbedding { n_frequencies: weights.nrows(), weights, biases })
    }

    pub fn output_width(&self) -> usize {
        self.weights.ncols()
    }

    /// Evaluate the embedding for a batch of levels. Every output
    /// entry is ≥ 0 (ReLU image).
    pub fn embed(&self, taus: &[f64]) -> Result<Array2<f64>> {
        if let Some(bad) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::invalid(format!("τ must lie in [0,1], got {bad}")));
        }
        let features = cosine_features(taus, self.n_frequencies);
        let mut out = features.dot(&self.weights) + &self.biases;
        out.mapv_inplace(|x| x.max(0.0));
        Ok(out)
    }
}

/// `cos(π·i·τ)` feature rows, `i = 0..n`.
fn cosine_features(taus: &[f64], n_freq: usize) -> Array2<f64> {
    Array2::from_shape_fn((taus.len(), n_freq), |(r, i)| {
        (std::f64::consts::PI * i as f64 * taus[r]).cos()
    })
}

/// Architecture of an implicit quantile network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqnArch {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Cosine frequencies in φ.
    pub n_frequencies: usize,
    /// Shared width of ψ's and φ's outputs (the product space).
    pub embedding_dim: usize,
    /// Hidden widths of the head g; the final linear layer to
    /// `output_dim` is implied.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Preset name this arch came from, echoed in checkpoints.
    pub preset: String,
}

impl IqnArch {
    /// `small`: 32 frequencies, widths 32/32/16/1 — the test-scale
    /// preset. `traffic`: 64 frequencies, widths 64/64/64/32/1 — the
    /// production default.
    pub fn preset(name: &str, input_dim: usize, output_dim: usize) -> Result<Self> {
        let (n_frequencies, embedding_dim, hidden) = match name {
            "small" => (32, 32, vec![16]),
            "traffic" => (64, 64, vec![64, 32]),
            other => {
                return Err(Error::invalid(format!(
                    "unknown implicit preset '{other}'; valid: small, traffic"
                )))
            }
        };
        Ok(IqnArch {
            input_dim,
            output_dim,
            n_frequencies,
            embedding_dim,
            hidden,
            activation: Activation::Relu,
            preset: name.into(),
        })
    }

    /// Layer shapes in parameter order: ψ, φ, then the g stack.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![
            (self.input_dim, self.embedding_dim),
            (self.n_frequencies, self.embedding_dim),
        ];
        let mut w = self.embedding_dim;
        for &h in &self.hidden {
            dims.push((w, h));
            w = h;
        }
        dims.push((w, self.output_dim));
        dims
    }
}

/// Implicit quantile network: weights plus the input standardizer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileNet {
    pub arch: IqnArch,
    /// Parameter tensors: `[ψ_W, ψ_b, φ_W, φ_b, g1_W, g1_b, …]`,
    /// weights as `(in, out)`, biases as `(1, out)`.
    pub params: Vec<Tensor>,
    pub standardizer: Standardizer,
}

impl QuantileNet {
    /// Fresh net with uniform `±1/sqrt(fan_in)` initialization.
    pub fn new(arch: IqnArch, seed: u64) -> Self {
        let params = init_layers(&arch.layer_dims(), seed);
        let standardizer = Standardizer::identity(arch.input_dim);
        QuantileNet { arch, params, standardizer }
    }

    /// The φ block as a standalone embedding.
    pub fn embedding(&self) -> CosineEmbedding {
        CosineEmbedding {
            n_frequencies: self.arch.n_frequencies,
            weights: self.params[2].clone(),
            biases: self.params[3].clone(),
        }
    }

    /// Register every parameter tensor on the tape as a gradient slot,
    /// in slot order.
    pub fn register_params(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect()
    }

    /// Forward pass on a tape through pre-registered parameter nodes.
    /// `x` must be the standardized input batch `(B, input_dim)` and
    /// `tau` the level column `(B, 1)`.
    pub fn forward_with(&self, tape: &mut Tape, pn: &[NodeId], x: NodeId, tau: NodeId) -> NodeId {
        let act = self.arch.activation;
        // φ(τ): angles via τ · [0, π, 2π, …], then cos, linear, ReLU.
        let freq_row = tape.constant(Array2::from_shape_fn(
            (1, self.arch.n_frequencies),
            |(_, i)| std::f64::consts::PI * i as f64,
        ));
        let angles = tape.matmul(tau, freq_row);
        let cosines = tape.cos(angles);
        let phi_lin = linear(tape, cosines, pn[2], pn[3]);
        let phi = tape.relu(phi_lin);
        // ψ(y).
        let psi_lin = linear(tape, x, pn[0], pn[1]);
        let psi = act.apply(tape, psi_lin);
        // g(ψ ∘ φ).
        let mut h = tape.mul(psi, phi);
        let n_g_layers = self.arch.hidden.len() + 1;
        for l in 0..n_g_layers {
            h = linear(tape, h, pn[4 + 2 * l], pn[5 + 2 * l]);
            if l + 1 < n_g_layers {
                h = act.apply(tape, h);
            }
        }
        h
    }

    /// Forward pass registering parameters internally (inference path).
    pub fn forward_on_tape(&self, tape: &mut Tape, x: NodeId, tau: NodeId) -> NodeId {
        let pn = self.register_params(tape);
        self.forward_with(tape, &pn, x, tau)
    }

    /// Batch-vectorized quantile evaluation at raw (unstandardized)
    /// inputs paired with levels.
    pub fn predict(&self, ys: &[Vec<f64>], taus: &[f64]) -> Result<Vec<Vec<f64>>> {
        if ys.len() != taus.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs vs {} levels",
                ys.len(),
                taus.len()
            )));
        }
        if let Some(bad) = ys.iter().find(|y| y.len() != self.arch.input_dim) {
            return Err(Error::ShapeMismatch(format!(
                "input width {} does not match net input width {}",
                bad.len(),
                self.arch.input_dim
            )));
        }
        if let Some(bad) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::invalid(format!("τ must lie in [0,1], got {bad}")));
        }
        let mut x = rows_to_matrix(ys, self.arch.input_dim);
        self.standardizer.apply(&mut x);
        let tau_col =
            Array2::from_shape_fn((taus.len(), 1), |(r, _)| taus[r]);
        let mut tape = Tape::new();
        let xn = tape.input(x);
        let tn = tape.input(tau_col);
        let out = self.forward_on_tape(&mut tape, xn, tn);
        Ok(matrix_to_rows(tape.value(out)))
    }

    /// Scalar convenience for one-dimensional θ.
    pub fn predict_scalar(&self, y: &[f64], tau: f64) -> Result<f64> {
        let out = self.predict(std::slice::from_ref(&y.to_vec()), &[tau])?;
        Ok(out[0][0])
    }
}

/// Architecture of an explicit multi-head quantile network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitArch {
    pub input_dim: usize,
    /// Trunk hidden widths; the final linear layer maps to one head
    /// per level.
    pub hidden: Vec<usize>,
    /// Strictly increasing levels in (0,1), one head each.
    pub levels: Vec<f64>,
    pub activation: Activation,
    pub preset: String,
}

impl ExplicitArch {
    /// Trunk widths mirror the implicit presets: `small` → 32/16,
    /// `traffic` → 64/64/32.
    pub fn preset(name: &str, input_dim: usize, levels: Vec<f64>) -> Result<Self> {
        let hidden = match name {
            "small" => vec![32, 16],
            "traffic" => vec![64, 64, 32],
            other => {
                return Err(Error::invalid(format!(
                    "unknown explicit preset '{other}'; valid: small, traffic"
                )))
            }
        };
        let arch = ExplicitArch {
            input_dim,
            hidden,
            levels,
            activation: Activation::Relu,
            preset: name.into(),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::invalid("explicit net needs at least one level"));
        }
        LossConfig { alpha: 0.0, lambda: 0.0, levels: self.levels.clone() }.validate()
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut w = self.input_dim;
        for &h in &self.hidden {
            dims.push((w, h));
            w = h;
        }
        dims.push((w, self.levels.len()));
        dims
    }
}

/// Explicit quantile network: one output head per fixed level.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitQuantileNet {
    pub arch: ExplicitArch,
    pub params: Vec<Tensor>,
    pub standardizer: Standardizer,
}

impl ExplicitQuantileNet {
    pub fn new(arch: ExplicitArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = init_layers(&arch.layer_dims(), seed);
        let standardizer = Standardizer::identity(arch.input_dim);
        Ok(ExplicitQuantileNet { arch, params, standardizer })
    }

    /// Register every parameter tensor on the tape as a gradient slot.
    pub fn register_params(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect()
    }

    /// Forward pass on a tape through pre-registered parameter nodes;
    /// returns the `(B, K)` head matrix.
    pub fn forward_with(&self, tape: &mut Tape, pn: &[NodeId], x: NodeId) -> NodeId {
        let act = self.arch.activation;
        let mut h = x;
        let n_layers = self.arch.hidden.len() + 1;
        for l in 0..n_layers {
            h = linear(tape, h, pn[2 * l], pn[2 * l + 1]);
            if l + 1 < n_layers {
                h = act.apply(tape, h);
            }
        }
        h
    }

    /// Forward pass registering parameters internally (inference path).
    pub fn forward_on_tape(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let pn = self.register_params(tape);
        self.forward_with(tape, &pn, x)
    }

    /// All head values at raw inputs: rows of `(f_{τ_1}, …, f_{τ_K})`.
    pub fn predict(&self, ys: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(bad) = ys.iter().find(|y| y.len() != self.arch.input_dim) {
            return Err(Error::ShapeMismatch(format!(
                "input width {} does not match net input width {}",
                bad.len(),
                self.arch.input_dim
            )));
        }
        let mut x = rows_to_matrix(ys, self.arch.input_dim);
        self.standardizer.apply(&mut x);
        let mut tape = Tape::new();
        let xn = tape.input(x);
        let out = self.forward_on_tape(&mut tape, xn);
        Ok(matrix_to_rows(tape.value(out)))
    }
}

/// Architecture of the summary-statistic network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryArch {
    pub input_dim: usize,
    /// Output width; must equal the parameter dimension k.
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl SummaryArch {
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut w = self.input_dim;
        for &h in &self.hidden {
            dims.push((w, h));
            w = h;
        }
        dims.push((w, self.output_dim));
        dims
    }
}

/// Regression net for the learned summary statistic `S(y) ≈ E[θ|y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryNet {
    pub arch: SummaryArch,
    pub params: Vec<Tensor>,
    pub standardizer: Standardizer,
}

impl SummaryNet {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, seed: u64) -> Self {
        let arch = SummaryArch { input_dim, output_dim, hidden, activation: Activation::Relu };
        let params = init_layers(&arch.layer_dims(), seed);
        let standardizer = Standardizer::identity(input_dim);
        SummaryNet { arch, params, standardizer }
    }

    /// Register every parameter tensor on the tape as a gradient slot.
    pub fn register_params(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect()
    }

    /// Forward pass on a tape through pre-registered parameter nodes.
    pub fn forward_with(&self, tape: &mut Tape, pn: &[NodeId], x: NodeId) -> NodeId {
        let act = self.arch.activation;
        let mut h = x;
        let n_layers = self.arch.hidden.len() + 1;
        for l in 0..n_layers {
            h = linear(tape, h, pn[2 * l], pn[2 * l + 1]);
            if l + 1 < n_layers {
                h = act.apply(tape, h);
            }
        }
        h
    }

    /// Forward pass registering parameters internally (inference path).
    pub fn forward_on_tape(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let pn = self.register_params(tape);
        self.forward_with(tape, &pn, x)
    }

    /// `S(y)` for a batch of raw inputs.
    pub fn predict(&self, ys: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(bad) = ys.iter().find(|y| y.len() != self.arch.input_dim) {
            return Err(Error::ShapeMismatch(format!(
                "input width {} does not match summary input width {}",
                bad.len(),
                self.arch.input_dim
            )));
        }
        let mut x = rows_to_matrix(ys, self.arch.input_dim);
        self.standardizer.apply(&mut x);
        let mut tape = Tape::new();
        let xn = tape.input(x);
        let out = self.forward_on_tape(&mut tape, xn);
        Ok(matrix_to_rows(tape.value(out)))
    }
}

/// One linear layer `x·W + b` over registered parameter nodes.
fn linear(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let xw = tape.matmul(x, w);
    tape.add(xw, b)
}

/// Uniform `±1/sqrt(fan_in)` weight and bias initialization, drawn in
/// layer order from one seeded stream.
fn init_layers(dims: &[(usize, usize)], seed: u64) -> Vec<Tensor> {
    let tree = SeedTree::new(seed).child("init");
    let mut rng = tree.stream("layers", 0);
    let mut params = Vec::with_capacity(dims.len() * 2);
    for &(fan_in, fan_out) in dims {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |shape: (usize, usize)| {
            Array2::from_shape_fn(shape, |_| rng.gen::<f64>() * 2.0 * bound - bound)
        };
        params.push(draw((fan_in, fan_out)));
        params.push(draw((1, fan_out)));
    }
    params
}

fn rows_to_matrix(rows: &[Vec<f64>], width: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), width), |(r, c)| rows[r][c])
}

fn matrix_to_rows(m: &Tensor) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}
