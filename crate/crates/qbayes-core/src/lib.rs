//! Density-free Bayesian computation with quantile neural networks.
//!
//! The posterior `p(θ|y)` is represented by its inverse CDF: a network
//! `H` trained so that `H(y, τ) ≈ F⁻¹_{θ|y}(τ)` for `τ ~ U(0,1)`.
//! Posterior sampling then needs no densities and no Markov chain —
//! push fresh uniforms through the trained map:
//!
//! ```text
//! θ ≐ H(S(y), τ),   τ ~ U(0,1)
//! ```
//!
//! The pipeline has three stages, mirrored by the module layout:
//!
//! 1. **simulate** ([`sim`]) — draw `(θ⁽ⁱ⁾, y⁽ⁱ⁾, τ⁽ⁱ⁾)` triples from a
//!    prior + forward model;
//! 2. **train** ([`nets`], [`autodiff`]) — fit an implicit quantile
//!    network with the pinball loss on those triples;
//! 3. **sample / evaluate** ([`posterior`], [`metrics`], [`functional`])
//!    — evaluate the trained map at observed data with fresh base
//!    draws, form credible intervals, and estimate posterior
//!    functionals by a trapezoidal rule over ordered uniforms.
//!
//! [`oracles`] holds the closed-form references (conjugate
//! normal-normal posterior, distortion function, sinc quantiles, a
//! brute-force rejection sampler) that every statistical test is
//! checked against, and [`abc`] is the rejection-ABC baseline the
//! method is compared to at matched simulation budgets.
//!
//! Everything is `f64` and deterministic under a fixed seed: RNG
//! streams are split per purpose via [`rng::SeedTree`], and minibatch
//! gradients are sharded in a fixed order so results do not depend on
//! the worker count.

pub mod abc;
pub mod autodiff;
pub mod error;
pub mod functional;
pub mod metrics;
pub mod nets;
pub mod oracles;
pub mod posterior;
pub mod rng;
pub mod sim;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
