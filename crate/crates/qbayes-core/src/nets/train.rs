//! Minibatch Adam training for the three network families.
//!
//! Determinism contract: a run is a pure function of
//! `(net seed, dataset, config, train seed)`. Batches shuffle with a
//! stream keyed by the epoch index; gradient evaluation may shard a
//! batch across workers, but shard boundaries are fixed (512 rows) and
//! shard contributions are summed in shard order, so results are
//! bit-identical at any thread count. Resuming from a checkpoint at
//! epoch `e` replays exactly the batches a fresh run would see from
//! epoch `e` onward.
//!
//! τ levels during IQN training: epoch 0 uses the τ column stored in
//! the dataset (the triples' base draws); later epochs refresh τ by a
//! stratified assignment — a random permutation of the N strata
//! `[i/N, (i+1)/N)` plus an in-stratum jitter — so each record's level
//! is marginally uniform while every epoch covers the whole quantile
//! range evenly. This cuts pinball gradient noise relative to
//! independent redraws and keeps the per-record-uniform design.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, NodeId, Tape, Tensor};
use crate::error::Error;
use crate::rng::SeedTree;
use crate::sim::TripleDataset;
use crate::Result;

use super::{ExplicitQuantileNet, LossConfig, QuantileNet, Standardizer, SummaryNet};

/// Scheduled learning-rate change: from `epoch` onward use `lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDrop {
    pub epoch: usize,
    pub lr: f64,
}

/// Optimization schedule and loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Staged decays applied at the given epochs (ascending).
    #[serde(default)]
    pub lr_drops: Vec<LrDrop>,
    pub loss: LossConfig,
}

impl TrainConfig {
    /// The reference schedule: batch 2048, 200 epochs, Adam 1e−3
    /// dropping to 1e−4 at epoch 140 and 1e−5 at epoch 180.
    pub fn standard() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 2048,
            learning_rate: 1e-3,
            lr_drops: vec![LrDrop { epoch: 140, lr: 1e-4 }, LrDrop { epoch: 180, lr: 1e-5 }],
            loss: LossConfig::implicit_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be ≥ 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.loss.validate()
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.learning_rate;
        for d in &self.lr_drops {
            if epoch >= d.epoch {
                lr = d.lr;
            }
        }
        lr
    }
}

/// Per-epoch mean training loss, in epoch order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// A standardized minibatch.
struct Batch {
    x: Array2<f64>,
    tau: Array2<f64>,
    target: Array2<f64>,
}

/// Anything the generic SGD loop can optimize.
trait Trainable: Sync {
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut Vec<Tensor>;
    fn standardizer(&self) -> &Standardizer;
    fn uses_tau(&self) -> bool;
    fn build_loss(&self, tape: &mut Tape, batch: &Batch, loss: &LossConfig) -> NodeId;
}

impl Trainable for QuantileNet {
    fn params(&self) -> &[Tensor] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut Vec<Tensor> {
        &mut self.params
    }
    fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }
    fn uses_tau(&self) -> bool {
        true
    }
    fn build_loss(&self, tape: &mut Tape, batch: &Batch, loss: &LossConfig) -> NodeId {
        let pn = self.register_params(tape);
        let x = tape.input(batch.x.clone());
        let tau = tape.input(batch.tau.clone());
        let k = batch.target.ncols();
        let target = tape.input(batch.target.clone());

        // Pinball at the drawn τ.
        let pred = self.forward_with(tape, &pn, x, tau);
        let neg_pred = tape.scale(pred, -1.0);
        let u = tape.add(target, neg_pred);
        let tau_wide = if k == 1 {
            tau
        } else {
            let ones = tape.constant(Array2::ones((1, k)));
            tape.matmul(tau, ones)
        };
        let minus_one = tape.constant(Array2::from_elem((1, k), -1.0));
        let tau_m1 = tape.add(tau_wide, minus_one);
        let lo = tape.mul(u, tau_wide);
        let hi = tape.mul(u, tau_m1);
        let rho = tape.max(lo, hi);
        let pin = tape.mean(rho);

        // MSE against the median prediction (τ = 0.5).
        let tau_half = tape.input(Array2::from_elem((batch.x.nrows(), 1), 0.5));
        let pred_med = self.forward_with(tape, &pn, x, tau_half);
        let neg_med = tape.scale(pred_med, -1.0);
        let u_med = tape.add(target, neg_med);
        let sq = tape.square(u_med);
        let mse = tape.mean(sq);

        let pin_scaled = tape.scale(pin, loss.alpha);
        tape.add(pin_scaled, mse)
    }
}

impl Trainable for ExplicitQuantileNet {
    fn params(&self) -> &[Tensor] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut Vec<Tensor> {
        &mut self.params
    }
    fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }
    fn uses_tau(&self) -> bool {
        false
    }
    fn build_loss(&self, tape: &mut Tape, batch: &Batch, loss: &LossConfig) -> NodeId {
        let levels = &self.arch.levels;
        let k = levels.len();
        let b = batch.x.nrows();
        let pn = self.register_params(tape);
        let x = tape.input(batch.x.clone());
        let preds = self.forward_with(tape, &pn, x);

        // Residuals against the scalar target tiled across heads.
        let target_wide = tape.input(Array2::from_shape_fn((b, k), |(r, _)| batch.target[(r, 0)]));
        let neg_pred = tape.scale(preds, -1.0);
        let u = tape.add(target_wide, neg_pred);

        // ρ_{τ_k} with the level constants tiled across the batch.
        let tau_wide = tape.constant(Array2::from_shape_fn((b, k), |(_, c)| levels[c]));
        let tau_m1 = tape.constant(Array2::from_shape_fn((b, k), |(_, c)| levels[c] - 1.0));
        let lo = tape.mul(u, tau_wide);
        let hi = tape.mul(u, tau_m1);
        let rho = tape.max(lo, hi);
        let pin = tape.mean(rho);

        // Non-crossing hinge: for each head pair i < j (τ_i < τ_j),
        // penalize max(0, f_{τ_i} − f_{τ_j}), summed over pairs and
        // averaged over records.
        let n_pairs = k * (k - 1) / 2;
        if n_pairs == 0 || loss.lambda == 0.0 {
            return pin;
        }
        let mut diff = Array2::zeros((k, n_pairs));
        let mut p = 0;
        for i in 0..k {
            for j in (i + 1)..k {
                diff[(i, p)] = 1.0;
                diff[(j, p)] = -1.0;
                p += 1;
            }
        }
        let diff_node = tape.constant(diff);
        let gaps = tape.matmul(preds, diff_node);
        let hinge = tape.relu(gaps);
        let hinge_mean = tape.mean(hinge);
        // mean() averaged over records AND pairs; restore the pair sum.
        let penalty = tape.scale(hinge_mean, loss.lambda * n_pairs as f64);
        tape.add(pin, penalty)
    }
}

impl Trainable for SummaryNet {
    fn params(&self) -> &[Tensor] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut Vec<Tensor> {
        &mut self.params
    }
    fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }
    fn uses_tau(&self) -> bool {
        false
    }
    fn build_loss(&self, tape: &mut Tape, batch: &Batch, _loss: &LossConfig) -> NodeId {
        let pn = self.register_params(tape);
        let x = tape.input(batch.x.clone());
        let pred = self.forward_with(tape, &pn, x);
        let target = tape.input(batch.target.clone());
        let neg_pred = tape.scale(pred, -1.0);
        let u = tape.add(target, neg_pred);
        let sq = tape.square(u);
        tape.mean(sq)
    }
}

/// Train an implicit quantile network on the triples, fitting the
/// input standardizer first. Uses a fresh optimizer; the final
/// optimizer state is returned for checkpointing.
pub fn train(
    net: &mut QuantileNet,
    ds: &TripleDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TrainReport, AdamState)> {
    let mut state = AdamState::new(&net.params, cfg.learning_rate);
    net.standardizer = fit_standardizer_checked(ds, net.arch.input_dim)?;
    let report = sgd_loop(net, ds, cfg, seed, &mut state, 0)?;
    Ok((report, state))
}

/// Continue training from a saved optimizer state; epoch numbering
/// (and therefore batch shuffles, τ refreshes, and lr drops) picks up
/// at `epochs_done`, and the Adam step counter keeps counting. The
/// stored standardizer is kept as-is.
pub fn train_resume(
    net: &mut QuantileNet,
    ds: &TripleDataset,
    cfg: &TrainConfig,
    seed: u64,
    state: &mut AdamState,
    epochs_done: usize,
) -> Result<TrainReport> {
    sgd_loop(net, ds, cfg, seed, state, epochs_done)
}

/// Train an explicit multi-head net (multi-quantile loss with
/// non-crossing penalty).
pub fn train_explicit(
    net: &mut ExplicitQuantileNet,
    ds: &TripleDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TrainReport, AdamState)> {
    let mut state = AdamState::new(&net.params, cfg.learning_rate);
    net.standardizer = fit_standardizer_checked(ds, net.arch.input_dim)?;
    let report = sgd_loop(net, ds, cfg, seed, &mut state, 0)?;
    Ok((report, state))
}

/// Fit the summary net `S(y) ≈ E[θ|y]` by mean squared error.
pub fn fit_summary(
    net: &mut SummaryNet,
    ds: &TripleDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TrainReport, AdamState)> {
    let mut state = AdamState::new(&net.params, cfg.learning_rate);
    net.standardizer = fit_standardizer_checked(ds, net.arch.input_dim)?;
    let report = sgd_loop(net, ds, cfg, seed, &mut state, 0)?;
    Ok((report, state))
}

fn fit_standardizer_checked(ds: &TripleDataset, input_dim: usize) -> Result<Standardizer> {
    if ds.records.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if ds.meta.dims.y != input_dim {
        return Err(Error::ShapeMismatch(format!(
            "dataset y width {} does not match net input width {input_dim}",
            ds.meta.dims.y
        )));
    }
    let x = Array2::from_shape_fn((ds.records.len(), input_dim), |(r, c)| ds.records[r].y[c]);
    Ok(Standardizer::fit(&x))
}

/// Rows per gradient shard; fixed so the shard sum (and therefore the
/// result) is independent of worker count.
const SHARD_ROWS: usize = 512;

fn sgd_loop<T: Trainable>(
    net: &mut T,
    ds: &TripleDataset,
    cfg: &TrainConfig,
    seed: u64,
    state: &mut AdamState,
    start_epoch: usize,
) -> Result<TrainReport> {
    cfg.validate()?;
    if start_epoch >= cfg.epochs {
        return Err(Error::invalid(format!(
            "nothing to train: {start_epoch} epochs already done of {}",
            cfg.epochs
        )));
    }
    let n = ds.records.len();
    let in_dim = ds.meta.dims.y;
    let k = ds.meta.dims.theta;

    // Full standardized input matrix, targets, and the stored τ column.
    let mut x_all = Array2::from_shape_fn((n, in_dim), |(r, c)| ds.records[r].y[c]);
    net.standardizer().apply(&mut x_all);
    let t_all = Array2::from_shape_fn((n, k), |(r, c)| ds.records[r].theta[c]);
    let tau_stored: Vec<f64> = ds.records.iter().map(|r| r.tau[0]).collect();

    let tree = SeedTree::new(seed).child("train");
    let mut epoch_losses = Vec::with_capacity(cfg.epochs - start_epoch);

    for epoch in start_epoch..cfg.epochs {
        state.lr = cfg.lr_at(epoch);

        // Epoch shuffle.
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = tree.stream("perm", epoch as u64);
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }

        // Per-record τ: stored draws on epoch 0, stratified refresh after.
        let tau_epoch: Vec<f64> = if !net.uses_tau() || epoch == 0 {
            tau_stored.clone()
        } else {
            let mut trng = tree.stream("tau", epoch as u64);
            let mut cell: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                cell.swap(i, trng.gen_range(0..=i));
            }
            (0..n).map(|i| (cell[i] as f64 + trng.gen::<f64>()) / n as f64).collect()
        };

        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in perm.chunks(cfg.batch_size).enumerate() {
            let batch = gather_batch(&x_all, &t_all, &tau_epoch, chunk);
            let (loss, grads) = eval_gradient(&*net, &batch, &cfg.loss);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: batch_idx });
            }
            state.step(net.params_mut(), &grads);
            epoch_loss += loss * chunk.len() as f64;
        }
        epoch_losses.push(epoch_loss / n as f64);
    }
    Ok(TrainReport { epoch_losses })
}

fn gather_batch(
    x_all: &Array2<f64>,
    t_all: &Array2<f64>,
    tau: &[f64],
    idx: &[usize],
) -> Batch {
    let b = idx.len();
    Batch {
        x: Array2::from_shape_fn((b, x_all.ncols()), |(r, c)| x_all[(idx[r], c)]),
        tau: Array2::from_shape_fn((b, 1), |(r, _)| tau[idx[r]]),
        target: Array2::from_shape_fn((b, t_all.ncols()), |(r, c)| t_all[(idx[r], c)]),
    }
}

/// Loss value and full-shape parameter gradients for one batch,
/// sharded over fixed 512-row blocks and recombined in block order.
fn eval_gradient<T: Trainable>(net: &T, batch: &Batch, loss_cfg: &LossConfig) -> (f64, Vec<Tensor>) {
    let b = batch.x.nrows();
    let n_params = net.params().len();
    let bounds: Vec<(usize, usize)> = (0..b.div_ceil(SHARD_ROWS))
        .map(|s| (s * SHARD_ROWS, usize::min((s + 1) * SHARD_ROWS, b)))
        .collect();

    let shard_results: Vec<(f64, Vec<Tensor>)> = bounds
        .par_iter()
        .map(|&(lo, hi)| {
            let sub = Batch {
                x: batch.x.slice(ndarray::s![lo..hi, ..]).to_owned(),
                tau: batch.tau.slice(ndarray::s![lo..hi, ..]).to_owned(),
                target: batch.target.slice(ndarray::s![lo..hi, ..]).to_owned(),
            };
            let mut tape = Tape::new();
            let loss_node = net.build_loss(&mut tape, &sub, loss_cfg);
            let loss = tape.scalar(loss_node);
            let grads = tape.backward(loss_node, n_params);
            (loss, grads)
        })
        .collect();

    let mut total_loss = 0.0;
    let mut acc: Vec<Tensor> = net.params().iter().map(|p| Tensor::zeros(p.dim())).collect();
    for (&(lo, hi), (loss, grads)) in bounds.iter().zip(shard_results) {
        let w = (hi - lo) as f64 / b as f64;
        total_loss += w * loss;
        for (slot, g) in grads.into_iter().enumerate() {
            if g.dim() == acc[slot].dim() {
                acc[slot].zip_mut_with(&g, |a, &gv| *a += w * gv);
            }
            // (1,1) zero sentinel for an untouched slot: contributes nothing.
        }
    }
    (total_loss, acc)
}

/// Combined IQN loss `α · mean ρ_τ + MSE at τ = 0.5` evaluated on raw
/// inputs (standardized internally). Public for tests and diagnostics.
pub fn combined_loss(
    net: &QuantileNet,
    ys: &[Vec<f64>],
    thetas: &[Vec<f64>],
    taus: &[f64],
    loss_cfg: &LossConfig,
) -> Result<f64> {
    Ok(combined_loss_grad(net, ys, thetas, taus, loss_cfg)?.0)
}

/// Combined loss plus parameter gradients (full shapes), for
/// finite-difference verification.
pub fn combined_loss_grad(
    net: &QuantileNet,
    ys: &[Vec<f64>],
    thetas: &[Vec<f64>],
    taus: &[f64],
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let batch = make_batch(&net.standardizer, net.arch.input_dim, net.arch.output_dim, ys, thetas, Some(taus))?;
    loss_and_grads(net, &batch, loss_cfg)
}

/// Multi-quantile loss `(1/NK)ΣΣρ_{τ_k} + λ·crossing hinge` on raw
/// inputs.
pub fn multi_quantile_loss(
    net: &ExplicitQuantileNet,
    ys: &[Vec<f64>],
    thetas: &[Vec<f64>],
    loss_cfg: &LossConfig,
) -> Result<f64> {
    Ok(multi_quantile_loss_grad(net, ys, thetas, loss_cfg)?.0)
}

/// Multi-quantile loss plus parameter gradients.
pub fn multi_quantile_loss_grad(
    net: &ExplicitQuantileNet,
    ys: &[Vec<f64>],
    thetas: &[Vec<f64>],
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let batch = make_batch(&net.standardizer, net.arch.input_dim, 1, ys, thetas, None)?;
    loss_and_grads(net, &batch, loss_cfg)
}

/// Summary-net MSE loss plus parameter gradients.
pub fn summary_loss_grad(
    net: &SummaryNet,
    ys: &[Vec<f64>],
    thetas: &[Vec<f64>],
) -> Result<(f64, Vec<Tensor>)> {
    let batch = make_batch(
        &net.standardizer,
        net.arch.input_dim,
        net.arch.output_dim,
        ys,
        thetas,
        None,
    )?;
    loss_and_grads(net, &batch, &LossConfig::implicit_default())
}

fn make_batch(
    standardizer: &Standardizer,
    in_dim: usize,
    out_dim: usize,
    ys: &[Vec<f64>],
    thetas: &[Vec<f64>],
    taus: Option<&[f64]>,
) -> Result<Batch> {
    if ys.is_empty() {
        return Err(Error::invalid("loss of an empty batch"));
    }
    if ys.len() != thetas.len() || taus.is_some_and(|t| t.len() != ys.len()) {
        return Err(Error::ShapeMismatch("batch component lengths differ".into()));
    }
    if let Some(bad) = ys.iter().find(|y| y.len() != in_dim) {
        return Err(Error::ShapeMismatch(format!(
            "input width {} does not match net input width {in_dim}",
            bad.len()
        )));
    }
    if let Some(bad) = thetas.iter().find(|t| t.len() != out_dim) {
        return Err(Error::ShapeMismatch(format!(
            "target width {} does not match net output width {out_dim}",
            bad.len()
        )));
    }
    if let Some(bad) = taus.and_then(|ts| ts.iter().find(|t| !(0.0..=1.0).contains(*t))) {
        return Err(Error::invalid(format!("τ must lie in [0,1], got {bad}")));
    }
    let b = ys.len();
    let mut x = Array2::from_shape_fn((b, in_dim), |(r, c)| ys[r][c]);
    standardizer.apply(&mut x);
    Ok(Batch {
        x,
        tau: Array2::from_shape_fn((b, 1), |(r, _)| taus.map_or(0.5, |t| t[r])),
        target: Array2::from_shape_fn((b, out_dim), |(r, c)| thetas[r][c]),
    })
}

fn loss_and_grads<T: Trainable>(
    net: &T,
    batch: &Batch,
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let loss_node = net.build_loss(&mut tape, batch, loss_cfg);
    let loss = tape.scalar(loss_node);
    let raw = tape.backward(loss_node, net.params().len());
    let grads = raw
        .into_iter()
        .zip(net.params())
        .map(|(g, p)| if g.dim() == p.dim() { g } else { Tensor::zeros(p.dim()) })
        .collect();
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::pinball_loss;
    use crate::nets::{ExplicitArch, IqnArch};
    use crate::sim::{DatasetMeta, Dims, TrainingTriple};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// `n` records with `θ = slope·y + noise`, `y ~ U(0,1)`.
    fn toy_dataset(n: usize, slope: f64, noise: f64, seed: u64) -> TripleDataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|_| {
                let y: f64 = rng.gen();
                let theta = slope * y + noise * (rng.gen::<f64>() - 0.5);
                TrainingTriple { theta: vec![theta], y: vec![y], tau: vec![rng.gen()], z: None }
            })
            .collect();
        TripleDataset {
            records,
            meta: DatasetMeta {
                version: 1,
                model: serde_json::json!({"name": "toy"}),
                dims: Dims { theta: 1, y: 1, tau: 1, z: 0 },
                seed,
                n_records: n,
                created: String::new(),
            },
        }
    }

    /// Zero every weight, then make the net output the constant `c`
    /// by setting the final bias.
    fn constant_net(arch: IqnArch, c: f64) -> QuantileNet {
        let mut net = QuantileNet::new(arch, 0);
        for p in &mut net.params {
            p.fill(0.0);
        }
        let last = net.params.len() - 1;
        net.params[last].fill(c);
        net
    }

    #[test]
    fn lr_schedule_steps_down() {
        let cfg = TrainConfig::standard();
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(139), 1e-3);
        assert_eq!(cfg.lr_at(140), 1e-4);
        assert_eq!(cfg.lr_at(180), 1e-5);
        assert_eq!(cfg.lr_at(199), 1e-5);
    }

    #[test]
    fn combined_loss_hand_example() {
        // Constant net f ≡ 1, target 2, τ = 0.9:
        //   pinball = max(0.9·1, −0.1·1) = 0.9,  MSE = (2−1)² = 1.
        let net = constant_net(IqnArch::preset("small", 1, 1).unwrap(), 1.0);
        let ys = vec![vec![0.3]];
        let thetas = vec![vec![2.0]];
        let mut cfg = LossConfig::implicit_default();
        let loss = combined_loss(&net, &ys, &thetas, &[0.9], &cfg).unwrap();
        assert_abs_diff_eq!(loss, 1.9, epsilon = 1e-12);

        // α scales only the pinball term.
        cfg.alpha = 0.5;
        let loss = combined_loss(&net, &ys, &thetas, &[0.9], &cfg).unwrap();
        assert_abs_diff_eq!(loss, 0.5 * 0.9 + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn explicit_loss_hand_example_with_crossing() {
        // Heads fixed at f_{0.1} = 1, f_{0.9} = 0 (crossed), target 0:
        //   pinball = (ρ_{0.1}(−1) + ρ_{0.9}(0)) / 2 = (0.9 + 0) / 2
        //   hinge   = max(0, f_{0.1} − f_{0.9}) = 1
        let arch = ExplicitArch::preset("small", 1, vec![0.1, 0.9]).unwrap();
        let mut net = ExplicitQuantileNet::new(arch, 0).unwrap();
        for p in &mut net.params {
            p.fill(0.0);
        }
        let last = net.params.len() - 1;
        net.params[last][(0, 0)] = 1.0;
        net.params[last][(0, 1)] = 0.0;

        let ys = vec![vec![0.0]];
        let thetas = vec![vec![0.0]];
        let mut cfg = LossConfig::explicit_default(vec![0.1, 0.9]);
        let loss = multi_quantile_loss(&net, &ys, &thetas, &cfg).unwrap();
        assert_abs_diff_eq!(loss, 0.45 + 1.0, epsilon = 1e-12);

        cfg.lambda = 0.0;
        let loss = multi_quantile_loss(&net, &ys, &thetas, &cfg).unwrap();
        assert_abs_diff_eq!(loss, 0.45, epsilon = 1e-12);
    }

    #[test]
    fn single_head_explicit_is_plain_pinball() {
        let arch = ExplicitArch::preset("small", 1, vec![0.3]).unwrap();
        let net = ExplicitQuantileNet::new(arch, 11).unwrap();
        let ys: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0]).collect();
        let thetas: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin()]).collect();

        let cfg = LossConfig::explicit_default(vec![0.3]);
        let loss = multi_quantile_loss(&net, &ys, &thetas, &cfg).unwrap();

        let preds = net.predict(&ys).unwrap();
        let by_hand = ys
            .iter()
            .enumerate()
            .map(|(i, _)| pinball_loss(thetas[i][0] - preds[i][0], 0.3))
            .sum::<f64>()
            / ys.len() as f64;
        assert_abs_diff_eq!(loss, by_hand, epsilon = 1e-12);
    }

    #[test]
    fn sharded_gradient_matches_single_tape() {
        // 1200 rows → three shards; the recombined gradient must match
        // one unsharded tape to round-off.
        let net = QuantileNet::new(IqnArch::preset("small", 2, 1).unwrap(), 3);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let b = 1200;
        let batch = Batch {
            x: Array2::from_shape_fn((b, 2), |_| rng.gen::<f64>() - 0.5),
            tau: Array2::from_shape_fn((b, 1), |_| rng.gen()),
            target: Array2::from_shape_fn((b, 1), |_| rng.gen::<f64>() * 2.0),
        };
        let cfg = LossConfig::implicit_default();
        let (loss_sharded, grads_sharded) = eval_gradient(&net, &batch, &cfg);
        let (loss_single, grads_single) = loss_and_grads(&net, &batch, &cfg).unwrap();
        assert_abs_diff_eq!(loss_sharded, loss_single, epsilon = 1e-12);
        for (a, b) in grads_sharded.iter().zip(&grads_single) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn training_learns_a_constant_target() {
        // θ ≡ 3.25 regardless of y: every quantile of the target is
        // 3.25, so predictions should collapse onto it.
        let ds = {
            let mut ds = toy_dataset(256, 0.0, 0.0, 21);
            for r in &mut ds.records {
                r.theta[0] = 3.25;
            }
            ds
        };
        let mut net = QuantileNet::new(IqnArch::preset("small", 1, 1).unwrap(), 7);
        let cfg = TrainConfig {
            epochs: 150,
            batch_size: 64,
            learning_rate: 1e-2,
            lr_drops: vec![LrDrop { epoch: 120, lr: 1e-3 }],
            loss: LossConfig::implicit_default(),
        };
        let (report, _) = train(&mut net, &ds, &cfg, 4).unwrap();
        assert!(
            report.epoch_losses.last().unwrap() < &0.01,
            "final loss {}",
            report.epoch_losses.last().unwrap()
        );
        for tau in [0.1, 0.5, 0.9] {
            let pred = net.predict_scalar(&[0.4], tau).unwrap();
            assert_abs_diff_eq!(pred, 3.25, epsilon = 0.05);
        }
    }

    #[test]
    fn same_seed_same_run() {
        let ds = toy_dataset(128, 1.0, 0.2, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_drops: vec![],
            loss: LossConfig::implicit_default(),
        };
        let mut a = QuantileNet::new(IqnArch::preset("small", 1, 1).unwrap(), 1);
        let mut b = a.clone();
        let (ra, _) = train(&mut a, &ds, &cfg, 17).unwrap();
        let (rb, _) = train(&mut b, &ds, &cfg, 17).unwrap();
        assert_eq!(ra.epoch_losses, rb.epoch_losses);
        assert_eq!(a.params, b.params, "training must be bit-deterministic");

        let mut c = QuantileNet::new(IqnArch::preset("small", 1, 1).unwrap(), 1);
        let (rc, _) = train(&mut c, &ds, &cfg, 18).unwrap();
        assert_ne!(ra.epoch_losses, rc.epoch_losses, "seed must matter");
    }

    #[test]
    fn resume_replays_the_straight_run() {
        let ds = toy_dataset(128, 1.0, 0.2, 3);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 32,
            learning_rate: 1e-3,
            // A drop inside the resumed stretch must still apply.
            lr_drops: vec![LrDrop { epoch: 3, lr: 1e-4 }],
            loss: LossConfig::implicit_default(),
        };
        let mut straight = QuantileNet::new(IqnArch::preset("small", 1, 1).unwrap(), 1);
        let mut split = straight.clone();

        let (r_straight, _) = train(&mut straight, &ds, &cfg, 9).unwrap();

        let cfg_head = TrainConfig { epochs: 2, ..cfg.clone() };
        let (r_head, mut state) = train(&mut split, &ds, &cfg_head, 9).unwrap();
        let r_tail = train_resume(&mut split, &ds, &cfg, 9, &mut state, 2).unwrap();

        assert_eq!(straight.params, split.params, "resume must replay the run exactly");
        let rejoined: Vec<f64> =
            r_head.epoch_losses.iter().chain(&r_tail.epoch_losses).copied().collect();
        assert_eq!(r_straight.epoch_losses, rejoined);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = toy_dataset(128, 1.0, 0.2, 4);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e155,
            lr_drops: vec![],
            loss: LossConfig::implicit_default(),
        };
        let mut net = QuantileNet::new(IqnArch::preset("small", 1, 1).unwrap(), 1);
        match train(&mut net, &ds, &cfg, 5) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn summary_net_fits_conditional_mean() {
        // θ = 2y with a little symmetric noise: E[θ|y] = 2y.
        let ds = toy_dataset(512, 2.0, 0.1, 6);
        let mut net = SummaryNet::new(1, vec![16], 1, 8);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 128,
            learning_rate: 1e-2,
            lr_drops: vec![LrDrop { epoch: 150, lr: 1e-3 }],
            loss: LossConfig::implicit_default(),
        };
        let (_, _) = fit_summary(&mut net, &ds, &cfg, 7).unwrap();
        for y in [0.2, 0.5, 0.8] {
            let pred = net.predict(&[vec![y]]).unwrap()[0][0];
            assert_abs_diff_eq!(pred, 2.0 * y, epsilon = 0.06);
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let ds = toy_dataset(8, 1.0, 0.1, 1);
        let cfg = TrainConfig::standard();

        // Net input width disagrees with the dataset's y width.
        let mut wide = QuantileNet::new(IqnArch::preset("small", 3, 1).unwrap(), 1);
        assert!(train(&mut wide, &ds, &cfg, 1).is_err());

        // Empty dataset.
        let empty = TripleDataset { records: vec![], meta: ds.meta.clone() };
        let mut net = QuantileNet::new(IqnArch::preset("small", 1, 1).unwrap(), 1);
        assert!(train(&mut net, &empty, &cfg, 1).is_err());

        // Resuming past the configured horizon.
        let mut state = AdamState::new(&net.params, 1e-3);
        assert!(train_resume(&mut net, &ds, &cfg, 1, &mut state, 200).is_err());

        // τ outside [0,1] in the loss API.
        let err = combined_loss(
            &net,
            &[vec![0.0]],
            &[vec![0.0]],
            &[1.5],
            &LossConfig::implicit_default(),
        );
        assert!(err.is_err());
    }
}
