//! Rate check for the trapezoidal functional estimator: with a clipped
//! normal quantile, the empirical MSE over seeds should decay like
//! n⁻⁴ (log-log slope ≈ −4). Reduced seed count here; the acceptance
//! suite runs the full 200-seed version.

use qbayes_core::functional::{log_log_slope, trapezoid_functional, Transform};
use qbayes_core::oracles::phi_inv;

#[test]
fn clipped_normal_quantile_mse_decays_like_n4() {
    // Clip level 0.2: truncates the tails so Q″ stays bounded and the
    // quadrature shows its clean interior rate.
    let delta = 0.2;
    let q = phi_inv;
    // E[Q(U) clipped] = 0 by symmetry.
    let truth = 0.0;

    let ns = [16usize, 32, 64, 128, 256, 512];
    let seeds = 60u64;
    let mut mses = Vec::with_capacity(ns.len());
    for &n in &ns {
        let mut sum_sq = 0.0;
        for seed in 0..seeds {
            let est = trapezoid_functional(q, &Transform::Identity, n, seed, delta).unwrap();
            sum_sq += (est.value - truth) * (est.value - truth);
        }
        mses.push(sum_sq / seeds as f64);
    }

    let slope = log_log_slope(&ns, &mses);
    assert!(
        (-4.6..=-3.3).contains(&slope),
        "log-log MSE slope {slope} outside the n⁻⁴ band; MSEs {mses:?}"
    );
}
