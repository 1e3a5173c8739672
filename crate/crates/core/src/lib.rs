//! Monte Carlo Greeks for European options under a hybrid model with
//! stochastic volatility and a stochastic short rate.
//!
//! Sensitivities are estimated with Malliavin integration-by-parts weights,
//! which stay unbiased for discontinuous payoffs, and with bump-and-revalue
//! finite differences for comparison.
//!
//! ```
//! use hsv_greeks::{greeks, simulate_paths, RunConfig, Greek};
//!
//! let mut cfg = RunConfig::default();
//! cfg.sim.n_paths = 500;
//! let model = cfg.build_model().unwrap();
//! let paths = simulate_paths(&model, &cfg.init, &cfg.sim).unwrap();
//! let delta = greeks::malliavin(&paths, &cfg.payoff, Greek::Delta).unwrap();
//! assert!(delta.value > 0.0 && delta.value < 1.0);
//! ```

// `!(x > 0.0)` deliberately rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod dump;
pub mod engine;
pub mod error;
pub mod greeks;
pub mod model;
pub mod rng;
pub mod runner;
pub mod stats;

pub use config::{ModelConfig, OutputFormat, RunConfig};
pub use engine::{simulate_paths, PathAccumulators, PathSet, SimConfig};
pub use error::{Error, Result};
pub use greeks::{Estimator, Greek, GreekEstimate};
pub use model::{InitialState, ModelSpec, Payoff};
