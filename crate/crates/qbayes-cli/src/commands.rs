//! Subcommand implementations.
//!
//! Each command reads its slice of the [`RunConfig`], derives a
//! stage-specific seed from the single top-level seed, runs the core
//! routine, and writes file artifacts into the output directory.
//!
//! Artifact discipline: primary artifacts (datasets, checkpoints,
//! draw CSVs, reports) are pure functions of config + seed and
//! byte-identical across reruns; wall-clock information lives only in
//! per-command `*_info.json` sidecars.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use qbayes_core::abc::{
    abc_posterior, budget_matched_compare, write_accepted_csv, AbcConfig, SummarySource,
};
use qbayes_core::functional::{Transform, DEFAULT_CLIP_DELTA};
use qbayes_core::metrics::{
    coverage, crps_from_samples, mean_pinball, rmse, write_residual_csv, LevelValue, MetricReport,
    ResidualRow,
};
use qbayes_core::nets::train::train_explicit;
use qbayes_core::nets::{
    fit_summary, load_checkpoint, save_checkpoint, train, train_resume, AnyNet, Checkpoint,
    ExplicitArch, ExplicitQuantileNet, IqnArch, LossConfig, QuantileNet, SummaryNet, TrainConfig,
};
use qbayes_core::oracles::conjugate_posterior;
use qbayes_core::posterior::{
    sample_posterior, summarize_posterior, write_sample_csv, write_summary_json,
    posterior_functional,
};
use qbayes_core::rng::SeedTree;
use qbayes_core::sim::satellite::load_satellite_csv;
use qbayes_core::sim::{builtin_by_name, load_dataset, save_dataset, simulate_dataset};
use qbayes_core::{Error, Result};

use crate::config::{config_hash, NetKind, RunConfig};

/// Resolved invocation state shared by every command.
pub struct Ctx {
    pub cfg: RunConfig,
    /// Hash of the resolved config, echoed in reports and sidecars.
    pub hash: String,
    /// Root of the per-stage seed derivation.
    pub tree: SeedTree,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Result<Ctx> {
        std::fs::create_dir_all(&cfg.out_dir)?;
        let hash = config_hash(&cfg);
        let tree = SeedTree::new(cfg.seed);
        Ok(Ctx { cfg, hash, tree })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    /// Write the command's wall-clock sidecar. This is the only place
    /// timestamps appear, so primary artifacts stay byte-stable.
    fn write_info(
        &self,
        command: &str,
        extra: serde_json::Value,
        started: Instant,
    ) -> Result<()> {
        let unix_time = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut info = json!({
            "command": command,
            "config_hash": self.hash,
            "seed": self.cfg.seed,
            "elapsed_seconds": started.elapsed().as_secs_f64(),
            "unix_time": unix_time,
        });
        if let (Some(obj), Some(ext)) = (info.as_object_mut(), extra.as_object()) {
            for (k, v) in ext {
                obj.insert(k.clone(), v.clone());
            }
        }
        let name = format!("{}_info.json", command.replace('-', "_"));
        std::fs::write(self.out(&name), serde_json::to_string_pretty(&info)?)?;
        Ok(())
    }
}

/// `--y-obs 1.3,0.4,…` beats `evaluation.y_obs`; one of them must be
/// present.
fn resolve_y_obs(flag: Option<&str>, cfg: &RunConfig) -> Result<Vec<f64>> {
    if let Some(s) = flag {
        return s
            .split(',')
            .map(|t| {
                let t = t.trim();
                t.parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad y_obs entry '{t}': {e}")))
            })
            .collect();
    }
    if cfg.evaluation.y_obs.is_empty() {
        return Err(Error::invalid(
            "no observation given: set evaluation.y_obs in the config or pass --y-obs",
        ));
    }
    Ok(cfg.evaluation.y_obs.clone())
}

fn load_summary_net(path: Option<&Path>) -> Result<Option<SummaryNet>> {
    match path {
        None => Ok(None),
        Some(p) => match load_checkpoint(p)?.net {
            AnyNet::Summary(s) => Ok(Some(s)),
            other => Err(Error::invalid(format!(
                "--summary expects a summary-net checkpoint, found kind '{}'",
                other.kind()
            ))),
        },
    }
}

fn write_loss_csv(path: &Path, start_epoch: usize, losses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for (i, loss) in losses.iter().enumerate() {
        w.write_record([(start_epoch + i).to_string(), loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `simulate`: draw training triples from the configured prior, or —
/// when `model.satellite_csv` is set — ingest and split the satellite
/// export into train/test datasets.
pub fn cmd_simulate(ctx: &Ctx, n_flag: Option<usize>) -> Result<()> {
    let t0 = Instant::now();
    let m = &ctx.cfg.model;

    if let Some(csv_path) = &m.satellite_csv {
        let split =
            load_satellite_csv(csv_path, m.train_fraction, ctx.tree.leaf("split", 0))?;
        let train_path = ctx.out("dataset_train.csv");
        let test_path = ctx.out("dataset_test.csv");
        save_dataset(&split.train, &train_path)?;
        save_dataset(&split.test, &test_path)?;
        println!(
            "wrote {} ({} records) and {} ({} records)",
            train_path.display(),
            split.train.len(),
            test_path.display(),
            split.test.len()
        );
        return ctx.write_info(
            "simulate",
            json!({ "n_rows": split.n_rows, "n_clamped": split.n_clamped }),
            t0,
        );
    }

    let model = builtin_by_name(&m.name, &m.params)?;
    let n = n_flag.unwrap_or(ctx.cfg.dataset.n_records);
    if n == 0 {
        return Err(Error::invalid("--n must be ≥ 1"));
    }
    let ds = simulate_dataset(&model, n, ctx.tree.leaf("simulate", 0))?;
    let path = ctx.cfg.dataset_path();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_dataset(&ds, &path)?;
    println!("wrote {} ({} records)", path.display(), ds.len());
    ctx.write_info("simulate", json!({ "path": path, "n_records": n }), t0)
}

/// `train`: fit the configured network on a triple dataset; writes
/// `checkpoint.json` and `loss_history.csv`. With `--resume`, training
/// continues from the stored optimizer state and epoch counter (the
/// dataset must be the one the checkpoint was trained on for the
/// continuation to replay exactly).
pub fn cmd_train(
    ctx: &Ctx,
    dataset_flag: Option<&Path>,
    resume: Option<&Path>,
    epochs_flag: Option<usize>,
) -> Result<()> {
    let t0 = Instant::now();
    let ds_path = dataset_flag.map(Path::to_path_buf).unwrap_or_else(|| ctx.cfg.dataset_path());
    let ds = load_dataset(&ds_path)?;

    let ckpt_path = ctx.out("checkpoint.json");
    let loss_path = ctx.out("loss_history.csv");

    if let Some(resume_path) = resume {
        let loaded = load_checkpoint(resume_path)?;
        let mut state = loaded.optimizer.ok_or_else(|| {
            Error::invalid("checkpoint carries no optimizer state; cannot resume")
        })?;
        let mut cfg = loaded.train_config.ok_or_else(|| {
            Error::invalid("checkpoint carries no training config; cannot resume")
        })?;
        let seed = loaded
            .seed
            .ok_or_else(|| Error::invalid("checkpoint carries no training seed; cannot resume"))?;
        if let Some(e) = epochs_flag {
            cfg.epochs = e;
        }
        let mut net = match loaded.net {
            AnyNet::Implicit(n) => n,
            other => {
                return Err(Error::invalid(format!(
                    "resume supports implicit-quantile checkpoints, found kind '{}'",
                    other.kind()
                )))
            }
        };
        let report = train_resume(&mut net, &ds, &cfg, seed, &mut state, loaded.epochs_done)?;
        write_loss_csv(&loss_path, loaded.epochs_done, &report.epoch_losses)?;
        let epochs_done = loaded.epochs_done + report.epoch_losses.len();
        let final_loss = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
        save_checkpoint(
            &Checkpoint {
                net: AnyNet::Implicit(net),
                train_config: Some(cfg),
                seed: Some(seed),
                epochs_done,
                optimizer: Some(state),
            },
            &ckpt_path,
        )?;
        println!(
            "resumed to epoch {epochs_done} (final loss {final_loss:.6}); wrote {}",
            ckpt_path.display()
        );
        return ctx.write_info("train", json!({ "resumed": true, "epochs_done": epochs_done }), t0);
    }

    let spec = &ctx.cfg.network;
    let dims = ds.meta.dims;
    let cfg = TrainConfig {
        epochs: epochs_flag.unwrap_or(ctx.cfg.training.epochs),
        batch_size: ctx.cfg.training.batch_size,
        learning_rate: ctx.cfg.training.learning_rate,
        lr_drops: ctx.cfg.training.lr_drops.clone(),
        loss: LossConfig {
            alpha: ctx.cfg.loss.alpha,
            lambda: ctx.cfg.loss.lambda.unwrap_or(match spec.kind {
                NetKind::Explicit => 1.0,
                _ => 0.0,
            }),
            levels: match spec.kind {
                NetKind::Explicit => spec.levels.clone(),
                _ => vec![],
            },
        },
    };
    cfg.validate()?;
    let init_seed = ctx.tree.leaf("init", 0);
    let train_seed = ctx.tree.leaf("train", 0);

    let (net, report, state) = match spec.kind {
        NetKind::Implicit => {
            let mut arch = IqnArch::preset(&spec.preset, dims.y, dims.theta)?;
            if let Some(a) = spec.activation {
                arch.activation = a;
            }
            let mut net = QuantileNet::new(arch, init_seed);
            let (report, state) = train(&mut net, &ds, &cfg, train_seed)?;
            (AnyNet::Implicit(net), report, state)
        }
        NetKind::Explicit => {
            if dims.theta != 1 {
                return Err(Error::invalid(format!(
                    "explicit nets model scalar θ; dataset has θ width {}",
                    dims.theta
                )));
            }
            let mut arch = ExplicitArch::preset(&spec.preset, dims.y, spec.levels.clone())?;
            if let Some(a) = spec.activation {
                arch.activation = a;
            }
            let mut net = ExplicitQuantileNet::new(arch, init_seed)?;
            let (report, state) = train_explicit(&mut net, &ds, &cfg, train_seed)?;
            (AnyNet::Explicit(net), report, state)
        }
        NetKind::Summary => {
            let mut net =
                SummaryNet::new(dims.y, spec.hidden.clone(), dims.theta, init_seed);
            if let Some(a) = spec.activation {
                net.arch.activation = a;
            }
            let (report, state) = fit_summary(&mut net, &ds, &cfg, train_seed)?;
            (AnyNet::Summary(net), report, state)
        }
    };

    write_loss_csv(&loss_path, 0, &report.epoch_losses)?;
    let final_loss = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
    save_checkpoint(
        &Checkpoint {
            net,
            train_config: Some(cfg.clone()),
            seed: Some(train_seed),
            epochs_done: cfg.epochs,
            optimizer: Some(state),
        },
        &ckpt_path,
    )?;
    println!(
        "trained {} epochs (final loss {final_loss:.6}); wrote {}",
        cfg.epochs,
        ckpt_path.display()
    );
    ctx.write_info("train", json!({ "epochs": cfg.epochs, "dataset": ds_path }), t0)
}

/// `sample`: M posterior draws for one observation, plus a summary
/// JSON (moments, quantiles, credible interval, trapezoid
/// functionals) when M is large enough for the interval convention.
pub fn cmd_sample(
    ctx: &Ctx,
    checkpoint: Option<&Path>,
    y_obs_flag: Option<&str>,
    m_flag: Option<usize>,
    summary_flag: Option<&Path>,
) -> Result<()> {
    let t0 = Instant::now();
    let ckpt_path =
        checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.out("checkpoint.json"));
    let ckpt = load_checkpoint(&ckpt_path)?;
    let net = ckpt.net.as_implicit()?;
    let summary = load_summary_net(summary_flag)?;
    let y_obs = resolve_y_obs(y_obs_flag, &ctx.cfg)?;
    let m = m_flag.unwrap_or(ctx.cfg.evaluation.m_draws);

    let set = sample_posterior(net, summary.as_ref(), &y_obs, m, ctx.tree.leaf("sample", 0))?;
    let sample_path = ctx.out("posterior_sample.csv");
    write_sample_csv(&set, &sample_path)?;

    // The central interval needs enough draws for its quantile
    // convention; tiny draw counts still get the CSV.
    if m >= 10 {
        let level = ctx.cfg.evaluation.levels.first().copied().unwrap_or(0.9);
        let summary_stats = summarize_posterior(
            net,
            &set,
            level,
            ctx.cfg.evaluation.n_nodes,
            ctx.tree.leaf("sample-functional", 0),
        )?;
        write_summary_json(&summary_stats, &ctx.out("posterior_summary.json"))?;
        println!(
            "wrote {} ({m} draws) and {}",
            sample_path.display(),
            ctx.out("posterior_summary.json").display()
        );
    } else {
        println!("wrote {} ({m} draws); too few draws for a summary", sample_path.display());
    }
    ctx.write_info("sample", json!({ "m": m }), t0)
}

/// `evaluate`: score a checkpoint on a labelled test dataset — RMSE of
/// the predicted median, mean CRPS from per-record draw sets, pinball
/// losses, and central-interval coverage at the configured levels.
/// Writes `metric_report.json` and the plot-ready `residuals.csv`.
pub fn cmd_evaluate(
    ctx: &Ctx,
    checkpoint: Option<&Path>,
    dataset_flag: Option<&Path>,
    summary_flag: Option<&Path>,
) -> Result<()> {
    let t0 = Instant::now();
    let ckpt_path =
        checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.out("checkpoint.json"));
    let ckpt = load_checkpoint(&ckpt_path)?;
    let net = ckpt.net.as_implicit()?;
    let summary = load_summary_net(summary_flag)?;
    let ds_path = dataset_flag.map(Path::to_path_buf).unwrap_or_else(|| ctx.cfg.dataset_path());
    let ds = load_dataset(&ds_path)?;
    if ds.meta.dims.theta != 1 {
        return Err(Error::invalid(format!(
            "evaluate scores scalar θ; dataset has θ width {}",
            ds.meta.dims.theta
        )));
    }

    let n = ds.len();
    let ys: Vec<Vec<f64>> = ds.records.iter().map(|r| r.y.clone()).collect();
    let xs = match &summary {
        Some(s) => s.predict(&ys)?,
        None => ys,
    };
    let truths: Vec<f64> = ds.records.iter().map(|r| r.theta[0]).collect();

    let eval_at = |tau: f64| -> Result<Vec<f64>> {
        Ok(net.predict(&xs, &vec![tau; n])?.into_iter().map(|row| row[0]).collect())
    };

    let medians = eval_at(0.5)?;
    let rmse_value = rmse(&medians, &truths)?;

    let mut pinball = Vec::new();
    let mut coverage_values = Vec::new();
    let mut residual_interval: Option<Vec<(f64, f64)>> = None;
    for &level in &ctx.cfg.evaluation.levels {
        let preds = eval_at(level)?;
        pinball.push(LevelValue { level, value: mean_pinball(&preds, &truths, level)? });

        let lo = eval_at((1.0 - level) / 2.0)?;
        let hi = eval_at((1.0 + level) / 2.0)?;
        let intervals: Vec<(f64, f64)> =
            lo.iter().zip(&hi).map(|(&a, &b)| (a.min(b), a.max(b))).collect();
        coverage_values.push(LevelValue { level, value: coverage(&intervals, &truths)? });
        if residual_interval.is_none() {
            residual_interval = Some(intervals);
        }
    }

    // Mean CRPS from a fresh draw set per record, seeded per index so
    // the result is independent of any batching.
    let m = ctx.cfg.evaluation.crps_draws;
    let sub = ctx.tree.child("evaluate");
    let mut crps_sum = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let set = sample_posterior(net, None, x, m, sub.leaf("crps", i as u64))?;
        crps_sum += crps_from_samples(&set.column(0), truths[i])?;
    }
    let crps_value = crps_sum / n as f64;

    let report = MetricReport {
        rmse: rmse_value,
        crps: crps_value,
        pinball,
        w1: None,
        coverage: coverage_values,
        n_records: n,
        config: json!({
            "config_hash": ctx.hash,
            "checkpoint": ckpt_path,
            "dataset": ds_path,
            "levels": ctx.cfg.evaluation.levels,
            "crps_draws": m,
        }),
    };
    std::fs::write(ctx.out("metric_report.json"), serde_json::to_string_pretty(&report)?)?;

    let interval = residual_interval
        .unwrap_or_else(|| medians.iter().map(|&p| (p, p)).collect());
    let rows: Vec<ResidualRow> = (0..n)
        .map(|i| ResidualRow {
            index: i,
            predicted_median: medians[i],
            interval_lo: interval[i].0,
            interval_hi: interval[i].1,
            truth: truths[i],
        })
        .collect();
    write_residual_csv(&ctx.out("residuals.csv"), &rows)?;

    println!("evaluated {n} records: RMSE {rmse_value:.6}, CRPS {crps_value:.6}");
    ctx.write_info("evaluate", json!({ "dataset": ds_path, "n_records": n }), t0)
}

/// `functional`: trapezoidal posterior functional `E[f(θ)|y]` for one
/// observation; writes `functional.json` with the estimate and its
/// quadrature settings.
pub fn cmd_functional(
    ctx: &Ctx,
    checkpoint: Option<&Path>,
    y_obs_flag: Option<&str>,
    transform_flag: Option<&str>,
    n_flag: Option<usize>,
    summary_flag: Option<&Path>,
) -> Result<()> {
    let t0 = Instant::now();
    let ckpt_path =
        checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.out("checkpoint.json"));
    let ckpt = load_checkpoint(&ckpt_path)?;
    let net = ckpt.net.as_implicit()?;
    let summary = load_summary_net(summary_flag)?;
    let y_obs = resolve_y_obs(y_obs_flag, &ctx.cfg)?;
    let name = transform_flag.unwrap_or(&ctx.cfg.evaluation.transform);
    let transform = Transform::from_name(name)?;
    let n = n_flag.unwrap_or(ctx.cfg.evaluation.n_nodes);
    let seed = ctx.tree.leaf("functional", 0);

    let value = posterior_functional(net, summary.as_ref(), &y_obs, &transform, n, seed)?;
    let out = json!({
        "transform": transform.name(),
        "value": value,
        "n": n,
        "clip_delta": DEFAULT_CLIP_DELTA,
        "seed": seed,
        "estimator": "trapezoidal",
    });
    std::fs::write(ctx.out("functional.json"), serde_json::to_string_pretty(&out)?)?;
    println!("E[{}(θ)|y] ≈ {value:?} (n = {n})", transform.name());
    ctx.write_info("functional", json!({ "transform": transform.name() }), t0)
}

/// `abc-compare`: budget-matched rejection ABC against the trained
/// net on one observation. Writes the byte-stable
/// `compare_report.json`, the accepted draws CSV, and puts wall-clock
/// timings in the info sidecar only.
pub fn cmd_abc_compare(
    ctx: &Ctx,
    checkpoint: Option<&Path>,
    y_obs_flag: Option<&str>,
    epsilon_flag: Option<f64>,
    budget_flag: Option<usize>,
) -> Result<()> {
    let t0 = Instant::now();
    let m = &ctx.cfg.model;
    if m.satellite_csv.is_some() {
        return Err(Error::invalid(
            "abc-compare needs a builtin forward model, not a satellite CSV",
        ));
    }
    let model = builtin_by_name(&m.name, &m.params)?;
    let y_obs = resolve_y_obs(y_obs_flag, &ctx.cfg)?;
    let abc_cfg = AbcConfig {
        epsilon: epsilon_flag.unwrap_or(ctx.cfg.abc.epsilon),
        budget: budget_flag.unwrap_or(ctx.cfg.abc.budget),
        summary: SummarySource::Model,
    };
    abc_cfg.validate()?;

    let ckpt_path =
        checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.out("checkpoint.json"));
    let ckpt = load_checkpoint(&ckpt_path)?;
    let net = ckpt.net.as_implicit()?;

    // The conjugate model has a closed-form reference posterior; score
    // both methods against it when available.
    let oracle_fn: Option<Box<dyn Fn(f64) -> f64>> = if m.name == "normal-normal" {
        let get = |k: &str, d: f64| m.params.get(k).and_then(|v| v.as_f64()).unwrap_or(d);
        let ybar = y_obs.iter().sum::<f64>() / y_obs.len() as f64;
        let cp = conjugate_posterior(
            get("mu", 0.0),
            get("tau2", 1.0),
            get("sigma2", 1.0),
            y_obs.len(),
            ybar,
        )?;
        Some(Box::new(move |p: f64| cp.quantile(p).expect("interior quantile")))
    } else {
        None
    };

    let (report, timing) = budget_matched_compare(
        &model,
        &y_obs,
        &abc_cfg,
        net,
        None,
        ctx.cfg.evaluation.m_draws,
        oracle_fn.as_deref(),
        ctx.tree.leaf("compare", 0),
    )?;
    std::fs::write(ctx.out("compare_report.json"), serde_json::to_string_pretty(&report)?)?;

    // Export a fresh accepted sample under its own stage seed (the
    // report's internal sample is not retained by the comparison).
    let sample = abc_posterior(&model, &y_obs, &abc_cfg, ctx.tree.leaf("abc-export", 0))?;
    write_accepted_csv(&sample, &ctx.out("abc_accepted.csv"))?;

    println!(
        "ABC accepted {} of {} (rate {:.3e}); W1(abc, net) = {:?}",
        report.n_accepted, report.budget, report.acceptance_rate, report.w1_abc_vs_net
    );
    ctx.write_info(
        "abc-compare",
        json!({ "timing": timing, "n_accepted": report.n_accepted }),
        t0,
    )
}
