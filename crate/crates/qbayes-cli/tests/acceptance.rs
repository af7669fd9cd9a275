//! The acceptance gate: eight criteria, one test each, at their
//! stated tolerances. Each test ends with a single `[criterion N]
//! PASS` line carrying the measured values (visible under
//! `--nocapture`); a failed assertion is the corresponding fail line.
//!
//! The conjugate-model network (criteria 1 and 6) is trained once and
//! shared. Criterion 8 exercises the installed binary; everything
//! else drives the library directly.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use qbayes_core::abc::{abc_posterior, AbcConfig, SummarySource};
use qbayes_core::functional::{log_log_slope, trapezoid_functional, Transform};
use qbayes_core::metrics::{rmse, w1_distance};
use qbayes_core::nets::train::train_explicit;
use qbayes_core::nets::{
    gradcheck, train, ExplicitArch, ExplicitQuantileNet, IqnArch, LossConfig, QuantileNet,
    TrainConfig,
};
use qbayes_core::oracles::{conjugate_posterior, phi_inv, sinc_true_quantile};
use qbayes_core::posterior::{interval_coverage, sample_posterior};
use qbayes_core::rng::SeedTree;
use qbayes_core::sim::satellite::{
    builtin_synthetic_drag, load_satellite_csv, scale_input, synthetic_drag_mean,
    synthetic_drag_sd,
};
use qbayes_core::sim::{builtin_normal_normal, builtin_sinc, simulate_dataset, ForwardModel};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// The reference conjugate model of criteria 1, 5, and 6:
/// θ ~ N(0, 1), y_i | θ ~ N(θ, 1), n = 5.
fn conjugate_model() -> ForwardModel {
    builtin_normal_normal(0.0, 1.0, 1.0, 5).expect("valid parameters")
}

struct TrainedConjugate {
    net: QuantileNet,
    train_seconds: f64,
}

/// Small-preset IQN trained on 10⁵ conjugate triples with the
/// reference schedule; shared by criteria 1 and 6.
fn conjugate_net() -> &'static TrainedConjugate {
    static NET: OnceLock<TrainedConjugate> = OnceLock::new();
    NET.get_or_init(|| {
        let model = conjugate_model();
        let ds = simulate_dataset(&model, 100_000, 0xA11CE).expect("simulation");
        let mut net =
            QuantileNet::new(IqnArch::preset("small", 5, 1).expect("preset"), 0xB0B);
        let t0 = Instant::now();
        train(&mut net, &ds, &TrainConfig::standard(), 0xCAB).expect("training converges");
        TrainedConjugate { net, train_seconds: t0.elapsed().as_secs_f64() }
    })
}

/// Criterion 1 — conjugate recovery. Small-preset IQN, N = 10⁵
/// normal-normal triples (μ=0, τ²=1, σ²=1, n=5); for 10 fresh
/// observations, W1 between 10⁴ posterior draws and the conjugate
/// oracle ≤ 0.1 posterior sd and the posterior mean lands within
/// 0.05 sd of m*. Runtime ≤ 10 minutes on one core.
#[test]
fn criterion_1_conjugate_recovery() {
    let trained = conjugate_net();
    let t_eval = Instant::now();
    let model = conjugate_model();
    let tree = SeedTree::new(0xAC5E01);

    let mut worst_w1 = 0.0f64;
    let mut worst_mean = 0.0f64;
    for i in 0..10 {
        let (_, y_obs, _) = model.draw_joint(&mut tree.stream("yobs", i));
        let ybar = mean(&y_obs);
        let cp = conjugate_posterior(0.0, 1.0, 1.0, 5, ybar).unwrap();
        let draws = sample_posterior(&trained.net, None, &y_obs, 10_000, tree.leaf("draws", i))
            .unwrap()
            .column(0);
        let oracle: Vec<f64> =
            (0..10_000).map(|j| cp.quantile((j as f64 + 0.5) / 10_000.0).unwrap()).collect();
        let w1 = w1_distance(&draws, &oracle).unwrap() / cp.sd();
        let mean_err = (mean(&draws) - cp.m_star).abs() / cp.sd();
        worst_w1 = worst_w1.max(w1);
        worst_mean = worst_mean.max(mean_err);
    }
    let runtime = trained.train_seconds + t_eval.elapsed().as_secs_f64();

    assert!(worst_w1 <= 0.1, "FAIL criterion 1: max W1 {worst_w1:.4} sd > 0.1 sd");
    assert!(worst_mean <= 0.05, "FAIL criterion 1: max |mean err| {worst_mean:.4} sd > 0.05 sd");
    assert!(runtime <= 600.0, "FAIL criterion 1: runtime {runtime:.0}s > 600s");
    println!(
        "[criterion 1] PASS — max W1 {worst_w1:.4} sd (≤ 0.1), max |mean err| {worst_mean:.4} sd (≤ 0.05), runtime {runtime:.0}s (≤ 600)"
    );
}

/// Criterion 2 — synthetic sinc quantiles. Implicit and explicit
/// (τ ∈ {0.05, 0.5, 0.95}) nets trained on 10⁵ draws; on a 201-point
/// x-grid each predicted curve matches the closed form within RMSE
/// 0.05, and the two methods agree within RMSE 0.03.
#[test]
fn criterion_2_sinc_quantiles() {
    let model = builtin_sinc();
    let ds = simulate_dataset(&model, 100_000, 0x51AC).expect("simulation");
    let levels = vec![0.05, 0.5, 0.95];

    let mut inet =
        QuantileNet::new(IqnArch::preset("traffic", 1, 1).expect("preset"), 0x1001);
    train(&mut inet, &ds, &TrainConfig::standard(), 0x1002).expect("implicit training");

    let mut enet = ExplicitQuantileNet::new(
        ExplicitArch::preset("traffic", 1, levels.clone()).expect("preset"),
        0x2001,
    )
    .expect("arch");
    let mut cfg = TrainConfig::standard();
    cfg.loss = LossConfig::explicit_default(levels.clone());
    train_explicit(&mut enet, &ds, &cfg, 0x2002).expect("explicit training");

    let grid: Vec<f64> = (0..201).map(|i| -1.0 + i as f64 * 0.01).collect();
    let xs: Vec<Vec<f64>> = grid.iter().map(|&x| vec![x]).collect();
    let explicit_rows = enet.predict(&xs).unwrap();

    let mut worst_truth = 0.0f64;
    let mut worst_cross = 0.0f64;
    for (k, &tau) in levels.iter().enumerate() {
        let truth: Vec<f64> = grid.iter().map(|&x| sinc_true_quantile(x, tau)).collect();
        let implicit_curve: Vec<f64> = inet
            .predict(&xs, &vec![tau; xs.len()])
            .unwrap()
            .into_iter()
            .map(|r| r[0])
            .collect();
        let explicit_curve: Vec<f64> = explicit_rows.iter().map(|r| r[k]).collect();

        let e_impl = rmse(&implicit_curve, &truth).unwrap();
        let e_expl = rmse(&explicit_curve, &truth).unwrap();
        let e_cross = rmse(&implicit_curve, &explicit_curve).unwrap();
        assert!(e_impl <= 0.05, "FAIL criterion 2: implicit RMSE {e_impl:.4} > 0.05 at τ={tau}");
        assert!(e_expl <= 0.05, "FAIL criterion 2: explicit RMSE {e_expl:.4} > 0.05 at τ={tau}");
        assert!(e_cross <= 0.03, "FAIL criterion 2: cross-method RMSE {e_cross:.4} > 0.03 at τ={tau}");
        worst_truth = worst_truth.max(e_impl).max(e_expl);
        worst_cross = worst_cross.max(e_cross);
    }
    println!(
        "[criterion 2] PASS — worst curve RMSE {worst_truth:.4} (≤ 0.05), worst implicit-vs-explicit RMSE {worst_cross:.4} (≤ 0.03)"
    );
}

/// Criterion 3 — trapezoidal MSE decay. For the clipped standard
/// normal quantile, the log-log regression of empirical MSE (200
/// seeds) on n ∈ {16..512} has slope in [−4.5, −3.5], matching the
/// O(n⁻⁴) bound.
#[test]
fn criterion_3_trapezoid_decay() {
    // δ = 0.2 keeps Q bounded with a modest constant, putting the
    // n⁻⁴ regime inside this n range.
    let delta = 0.2;
    let ns = [16usize, 32, 64, 128, 256, 512];
    let mses: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let se: f64 = (0..200)
                .map(|seed| {
                    let est =
                        trapezoid_functional(phi_inv, &Transform::Identity, n, seed, delta)
                            .unwrap()
                            .value;
                    // E[θ] of the clipped symmetric quantile is 0.
                    est * est
                })
                .sum();
            se / 200.0
        })
        .collect();
    let slope = log_log_slope(&ns, &mses);
    assert!(
        (-4.5..=-3.5).contains(&slope),
        "FAIL criterion 3: slope {slope:.3} outside [−4.5, −3.5]"
    );
    println!("[criterion 3] PASS — log-log MSE slope {slope:.3} ∈ [−4.5, −3.5]");
}

/// Criterion 4 — gradient correctness. Every network/loss
/// configuration passes finite-difference checks at relative
/// tolerance 1e−4 on 50 random seeds.
#[test]
fn criterion_4_gradient_checks() {
    let results = gradcheck::check_all_configs(50, 1e-4).expect("checks run");
    assert_eq!(results.len(), 10, "all configurations covered");
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for r in &results {
        assert!(
            r.passed(),
            "FAIL criterion 4: {} has {} failures (max rel err {:.2e})",
            r.name,
            r.failures,
            r.max_rel_err
        );
        checked += r.checked;
        worst = worst.max(r.max_rel_err);
    }
    println!(
        "[criterion 4] PASS — {} configs, {checked} coordinates checked, max rel err {worst:.2e} (≤ 1e-4)",
        results.len()
    );
}

/// Criterion 5 — ABC consistency. Normal-normal rejection ABC at
/// budget 10⁶: ε = 0.02 lands within 0.1 posterior sd of the
/// conjugate oracle in W1, and mean W1 over 20 seeds is nonincreasing
/// across ε ∈ {1, 0.3, 0.1, 0.03} within one Monte Carlo standard
/// error.
#[test]
fn criterion_5_abc_consistency() {
    let model = conjugate_model();
    let y_obs = [1.3, 0.4, 0.9, 1.8, 0.6];
    let cp = conjugate_posterior(0.0, 1.0, 1.0, 5, mean(&y_obs)).unwrap();
    let oracle: Vec<f64> =
        (0..8192).map(|i| cp.quantile((i as f64 + 0.5) / 8192.0).unwrap()).collect();
    let w1_to_oracle = |draws: &[f64]| w1_distance(draws, &oracle).unwrap();

    // Tight tolerance at the full budget.
    let cfg = AbcConfig { epsilon: 0.02, budget: 1_000_000, summary: SummarySource::Model };
    let sample = abc_posterior(&model, &y_obs, &cfg, 0xABC0).expect("accepts at ε = 0.02");
    let w1_tight = w1_to_oracle(&sample.column(0)) / cp.sd();
    assert!(w1_tight < 0.1, "FAIL criterion 5: ε=0.02 W1 {w1_tight:.4} sd ≥ 0.1 sd");

    // ε-sweep: 20 seeds per tolerance.
    let epsilons = [1.0, 0.3, 0.1, 0.03];
    let tree = SeedTree::new(0xABC1);
    let mut means = Vec::new();
    let mut ses = Vec::new();
    for (ei, &epsilon) in epsilons.iter().enumerate() {
        let cfg = AbcConfig { epsilon, budget: 1_000_000, summary: SummarySource::Model };
        let w1s: Vec<f64> = (0..20)
            .map(|s| {
                let sample =
                    abc_posterior(&model, &y_obs, &cfg, tree.leaf("sweep", (ei * 20 + s) as u64))
                        .expect("accepts");
                w1_to_oracle(&sample.column(0))
            })
            .collect();
        let m = mean(&w1s);
        let var = w1s.iter().map(|w| (w - m) * (w - m)).sum::<f64>() / (w1s.len() - 1) as f64;
        means.push(m);
        ses.push((var / w1s.len() as f64).sqrt());
    }
    for i in 1..epsilons.len() {
        // One MC standard error of the comparison between adjacent ε.
        let slack = (ses[i] * ses[i] + ses[i - 1] * ses[i - 1]).sqrt();
        assert!(
            means[i] <= means[i - 1] + slack,
            "FAIL criterion 5: mean W1 rose from {:.5} (ε={}) to {:.5} (ε={}), slack {slack:.5}",
            means[i - 1],
            epsilons[i - 1],
            means[i],
            epsilons[i]
        );
    }
    println!(
        "[criterion 5] PASS — ε=0.02 W1 {w1_tight:.4} sd (< 0.1); sweep mean W1 {:?} nonincreasing within one SE",
        means.iter().map(|m| (m * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
}

/// Criterion 6 — coverage calibration. Over 200 simulated (θ, y)
/// pairs from the conjugate model, the trained net's 90% central
/// credible interval covers the true θ at a rate in [0.85, 0.95].
#[test]
fn criterion_6_coverage_calibration() {
    let trained = conjugate_net();
    let model = conjugate_model();
    let rates =
        interval_coverage(&trained.net, None, &model, 200, 2_000, 0.9, 0xC0FE).unwrap();
    let rate = rates[0];
    assert!(
        (0.85..=0.95).contains(&rate),
        "FAIL criterion 6: 90% interval coverage {rate:.3} outside [0.85, 0.95]"
    );
    println!("[criterion 6] PASS — 90% interval coverage {rate:.3} ∈ [0.85, 0.95]");
}

/// Criterion 7 — satellite-drag reference. With the external Hubble
/// dataset supplied (QBAYES_SATELLITE_CSV or data/satellite.csv), the
/// full pipeline (20/80 split, reference schedule) must reach
/// RMSE ≤ 0.15 and CRPS ≤ 0.08 on the test split. Without it, a
/// 10⁴-row synthetic stand-in (smooth 7-input drag surface with
/// heteroskedastic noise) must pass criterion-1-style oracle checks.
#[test]
fn criterion_7_satellite_reference() {
    let external = std::env::var_os("QBAYES_SATELLITE_CSV")
        .map(PathBuf::from)
        .filter(|p| p.exists())
        .or_else(|| {
            let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/satellite.csv");
            p.exists().then_some(p)
        });

    match external {
        Some(path) => satellite_full_pipeline(&path),
        None => synthetic_drag_standin(),
    }
}

/// The full-scale branch: only reachable when the 1M-row export is
/// present on disk.
fn satellite_full_pipeline(path: &Path) {
    let split = load_satellite_csv(path, 0.2, 0x5A7).expect("ingest");
    let mut net = QuantileNet::new(
        IqnArch::preset("traffic", 7, 1).expect("preset"),
        0x5A70,
    );
    train(&mut net, &split.train, &TrainConfig::standard(), 0x5A71).expect("training");

    let xs: Vec<Vec<f64>> = split.test.records.iter().map(|r| r.y.clone()).collect();
    let truths: Vec<f64> = split.test.records.iter().map(|r| r.theta[0]).collect();
    let medians: Vec<f64> = net
        .predict(&xs, &vec![0.5; xs.len()])
        .unwrap()
        .into_iter()
        .map(|r| r[0])
        .collect();
    let rmse_value = rmse(&medians, &truths).unwrap();

    let tree = SeedTree::new(0x5A72);
    let mut crps_sum = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let draws = sample_posterior(&net, None, x, 128, tree.leaf("crps", i as u64))
            .unwrap()
            .column(0);
        crps_sum += qbayes_core::metrics::crps_from_samples(&draws, truths[i]).unwrap();
    }
    let crps_value = crps_sum / xs.len() as f64;

    assert!(rmse_value <= 0.15, "FAIL criterion 7: RMSE {rmse_value:.4} > 0.15");
    assert!(crps_value <= 0.08, "FAIL criterion 7: CRPS {crps_value:.4} > 0.08");
    println!(
        "[criterion 7] PASS — satellite pipeline RMSE {rmse_value:.4} (≤ 0.15), CRPS {crps_value:.4} (≤ 0.08)"
    );
}

/// The desk-scale branch: the stand-in model has a closed-form
/// conditional N(m(u), s(u)²), so posterior draws can be scored
/// exactly as in criterion 1 (tolerances widened for the 10⁴-row
/// budget and the 7-dimensional input).
fn synthetic_drag_standin() {
    let model = builtin_synthetic_drag();
    let ds = simulate_dataset(&model, 10_000, 0xD7A6).expect("simulation");
    let mut net = QuantileNet::new(
        IqnArch::preset("traffic", 7, 1).expect("preset"),
        0xD7A7,
    );
    train(&mut net, &ds, &TrainConfig::standard(), 0xD7A8).expect("training");

    let tree = SeedTree::new(0xD7A9);
    let mut worst_w1 = 0.0f64;
    let mut worst_mean = 0.0f64;
    for i in 0..10 {
        // The joint yields raw-unit inputs; the closed-form oracle is
        // stated in scaled coordinates.
        let (_, u_obs, _) = model.draw_joint(&mut tree.stream("obs", i));
        let scaled: Vec<f64> =
            u_obs.iter().enumerate().map(|(j, &v)| scale_input(j, v).0).collect();
        let m = synthetic_drag_mean(&scaled);
        let s = synthetic_drag_sd(&scaled);
        let draws =
            sample_posterior(&net, None, &u_obs, 10_000, tree.leaf("draws", i)).unwrap().column(0);
        let oracle: Vec<f64> =
            (0..10_000).map(|j| m + s * phi_inv((j as f64 + 0.5) / 10_000.0)).collect();
        let w1 = w1_distance(&draws, &oracle).unwrap() / s;
        let mean_err = (mean(&draws) - m).abs() / s;
        worst_w1 = worst_w1.max(w1);
        worst_mean = worst_mean.max(mean_err);
    }
    assert!(worst_w1 <= 0.3, "FAIL criterion 7: stand-in max W1 {worst_w1:.4} sd > 0.3 sd");
    assert!(
        worst_mean <= 0.25,
        "FAIL criterion 7: stand-in max |mean err| {worst_mean:.4} sd > 0.25 sd"
    );
    println!(
        "[criterion 7] PASS — stand-in max W1 {worst_w1:.4} sd (≤ 0.3), max |mean err| {worst_mean:.4} sd (≤ 0.25)"
    );
}

/// Criterion 8 — determinism. Every pipeline stage, run through the
/// binary twice under the same seed, produces byte-identical primary
/// artifacts (wall-clock data lives only in `*_info.json` sidecars,
/// which are exempt by design).
#[test]
fn criterion_8_stage_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let y_obs = "1.0,0.2,0.4,1.1,0.3";

    // Identical relative layouts under different roots, so path echoes
    // inside reports match byte-for-byte.
    let run_all = |root: &Path| {
        std::fs::create_dir_all(root).unwrap();
        let run = |args: &[&str]| {
            let out = Command::new(env!("CARGO_BIN_EXE_qbayes"))
                .current_dir(root)
                .args(args)
                .output()
                .expect("binary spawns");
            assert!(
                out.status.success(),
                "stage {:?} failed: {}",
                args.first(),
                String::from_utf8_lossy(&out.stderr)
            );
        };
        run(&["simulate", "--n", "2000", "--seed", "21", "--out", "."]);
        run(&["train", "--seed", "21", "--out", ".", "--dataset", "dataset.csv", "--epochs", "6"]);
        run(&["sample", "--seed", "21", "--out", ".", "--y-obs", y_obs, "--m", "500"]);
        run(&["evaluate", "--seed", "21", "--out", ".", "--dataset", "dataset.csv"]);
        run(&["functional", "--seed", "21", "--out", ".", "--y-obs", y_obs, "--transform", "square", "--n", "400"]);
        run(&[
            "abc-compare", "--seed", "21", "--out", ".", "--y-obs", y_obs, "--epsilon", "0.5",
            "--budget", "20000",
        ]);
    };
    let r1 = tmp.path().join("r1");
    let r2 = tmp.path().join("r2");
    run_all(&r1);
    run_all(&r2);

    let artifacts = [
        "dataset.csv",
        "checkpoint.json",
        "loss_history.csv",
        "posterior_sample.csv",
        "posterior_summary.json",
        "metric_report.json",
        "residuals.csv",
        "functional.json",
        "compare_report.json",
        "abc_accepted.csv",
    ];
    for name in artifacts {
        let a = std::fs::read(r1.join(name)).unwrap_or_else(|e| panic!("read {name}: {e}"));
        let b = std::fs::read(r2.join(name)).unwrap_or_else(|e| panic!("read {name}: {e}"));
        assert_eq!(a, b, "FAIL criterion 8: {name} differs between identical runs");
    }
    println!(
        "[criterion 8] PASS — {} primary artifacts byte-identical across two seeded runs",
        artifacts.len()
    );
}
