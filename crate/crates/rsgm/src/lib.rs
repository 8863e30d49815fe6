//! Riemannian score-based generative sampling on compact model manifolds.
//!
//! This crate implements the reverse-time diffusion sampler with rejection
//! resets on flat tori `T^d` and unit spheres `S^d`, together with the exact
//! heat kernels, closed-form target distributions, and the Monte Carlo
//! diagnostics used to study it:
//!
//! * [`manifold`] — exponential/logarithm maps, geodesic distance, orthonormal
//!   frames, exponential-map Jacobians, and uniform sampling.
//! * [`heat_kernel`] — wrapped-Gaussian theta series on `T^d`, the spectral
//!   Legendre series on `S^2`, their log-gradients, the pushforward-Gaussian
//!   approximation, and Gaussian-bound validation.
//! * [`targets`] — warped Gaussian mixtures on `T^d` and heat-kernel mixtures
//!   on `S^2` with closed-form heat-flow evolution and exact scores, plus a
//!   deterministic score-perturbation oracle.
//! * [`sampler`] — the reverse sampler with the `h^{1/4}` rejection rule,
//!   forward-process samplers, and the reset-probability experiment.
//! * [`estimators`] — periodic kernel density estimation, grid total-variation
//!   distance, and log-linear regression for decay-rate fits.
//! * [`config`] / [`experiments`] — the config-driven experiment runners
//!   behind the `rsgm` command-line interface.
//!
//! Trajectory batches are data-parallel. The `parallel` feature (on by
//! default) runs them on a rayon pool; disabling it falls back to a
//! sequential driver with identical outputs.
//!
//! ```
//! use rsgm::manifold::{Manifold, FramePolicy};
//! use rsgm::sampler::{SamplerConfig, rsgm_sample};
//! use rsgm::targets::Target;
//!
//! let manifold = Manifold::sphere(2);
//! let target = Target::default_sphere_mixture();
//! let config = SamplerConfig {
//!     horizon: 2.0,
//!     delta: 0.01,
//!     steps: 100,
//!     frame_policy: FramePolicy::Canonical,
//!     seed: 7,
//!     perturbation: Default::default(),
//! };
//! let record = rsgm_sample(manifold, &target, &config, 0).unwrap();
//! assert!(record.resets as usize <= config.steps);
//! ```

pub mod config;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod heat_kernel;
pub mod manifold;
pub mod parallel;
pub mod quadrature;
pub mod sampler;
pub mod targets;

pub use error::{Error, Result};
