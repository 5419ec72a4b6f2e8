//! Sequential Bayesian estimation of time-invariant deterioration model
//! parameters.
//!
//! The crate provides on-line particle filters with Gaussian-mixture
//! resampling (with and without likelihood tempering), MCMC-rejuvenated
//! iterated batch importance sampling, and an off-line tempered SMC sampler.
//! Two case studies ship with it: Paris-Erdogan fatigue crack growth and a
//! spatially distributed corrosion random field, each with an exact
//! reference solution (rejection sampling and a Kalman filter).

pub mod error;
pub mod filters;
pub mod gmm;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod output;
pub mod prob;

pub use error::{Error, Result};
pub use filters::{
    run_filter, DeteriorationModel, EvalCounter, FilterConfig, FilterKind, FilterReport,
    MeasurementSeries, StepRecord,
};
pub use gmm::GaussianMixture;
pub use prob::{Marginal, MeasurementError, PriorModel, WeightedEnsemble};
