//! The (1+1) evolution strategy with success-based step-size adaptation on
//! convex quadratic objectives, together with the closed-form quantities that
//! bound its linear convergence rate and Monte Carlo machinery that checks
//! those bounds empirically.
//!
//! Module map:
//!
//! - [`quadratic`]: the objective class `g((x - x*)ᵀ H (x - x*) / 2)`.
//! - [`stochastic`]: seeded, splittable randomness.
//! - [`es`]: the (1+1)-ES state machine and run traces.
//! - [`bounds`]: Φ, Φ⁻¹, success-probability thresholds and rate constants.
//! - [`potential`]: the potential function and step-size regimes.
//! - [`montecarlo`]: one-step estimators with standard errors.
//! - [`experiments`]: rate measurement, sweeps and the verification suite.
//! - [`cli`]: the command-line front end.
//!
//! Parallel sampling uses rayon when the `parallel` feature is enabled
//! (the default). Every estimator shards its work into fixed-size blocks on
//! dedicated substreams, so results are bit-identical with or without the
//! feature and for any thread count.

pub mod bounds;
pub mod cli;
mod error;
pub mod es;
pub mod experiments;
pub mod montecarlo;
pub mod parallel;
pub mod potential;
pub mod quadratic;
pub mod stochastic;

pub use error::{Error, Result};

/// Version tag embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
