//! phaselab: a Monte Carlo laboratory for interferometric phase estimation.
//!
//! The crate simulates the photocount statistics of a four-channel
//! (8-port homodyne / Mach-Zehnder) detection scheme, applies several
//! maximum-likelihood phase estimators to the simulated frames, and measures
//! their performance with circular statistics against closed-form
//! asymptotic baselines.
//!
//! Modules:
//! - [`model`] — channel means, Poisson and weak-pulse frame generators,
//!   reproducible per-frame RNG substreams;
//! - [`estimators`] — NFM (Gaussian-ML), Poissonian-ML (constrained and
//!   unconstrained), and single-parameter boundary estimators, the
//!   likelihood functions, and a brute-force grid oracle;
//! - [`metrics`] — circular dispersion, bias, window hit frequency, and
//!   bootstrap confidence intervals;
//! - [`theory`] — asymptotic dispersion formulas, Fisher information, the
//!   Cramér–Rao bound, and integrated costs;
//! - [`harness`] — experiment scenarios (intensity/window/phase/bias
//!   sweeps, jitter calibration) and config/CSV persistence.

pub mod estimators;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod theory;

pub use estimators::{EstimatorMethod, PhaseEstimate};
pub use model::{ChannelMeans, ConfigError, CountSample, ExperimentConfig, SamplingMode};
