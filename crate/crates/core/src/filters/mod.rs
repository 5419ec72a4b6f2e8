//! On-line and off-line filters for time-invariant parameters.
//!
//! * [`pf_run`]: bootstrap particle filter with multinomial resampling.
//! * [`pfgm_run`]: resampling replaced by draws from a Gaussian mixture fitted
//!   to the weighted particles; [`tpfgm_run`] adds adaptive likelihood
//!   tempering inside a step when the new measurement degenerates the weights.
//! * [`ibis_run`] / [`tibis_run`]: iterated batch importance sampling whose
//!   resampled particles are moved by an independent Metropolis-Hastings
//!   kernel with a mixture proposal ([`imh_gm_move`]).
//! * [`smc_run`]: off-line tempered SMC sampler for a single posterior.

mod context;
mod ibis;
mod imh;
mod particle;
mod smc;
mod tempering;

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{PriorModel, WeightedEnsemble};

pub use ibis::{ibis_run, tibis_run};
pub use imh::{imh_gm_move, MoveStats};
pub use particle::{pf_run, pfgm_run, tpfgm_run};
pub use smc::{smc_rerun, smc_run};
pub use tempering::{solve_temper_increment, tempered_ess, tempered_log_weights};

/// Counts deterioration model evaluations, one per (parameter vector, time)
/// pair.
#[derive(Debug, Default)]
pub struct EvalCounter(AtomicU64);

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

impl Clone for EvalCounter {
    fn clone(&self) -> Self {
        Self(AtomicU64::new(self.get()))
    }
}

/// A deterioration model with time-invariant parameters observed through a
/// noisy measurement channel.
pub trait DeteriorationModel: Sync {
    type Observation: Clone + Sync;

    fn prior(&self) -> &PriorModel;

    fn counter(&self) -> &EvalCounter;

    /// Deterioration state(s) at `time`, `None` when the model has diverged.
    /// Not counted as a model evaluation.
    fn predict(&self, theta: &[f64], time: f64) -> Option<Vec<f64>>;

    /// Log-likelihood of one measurement without touching the counter.
    fn observation_log_likelihood(&self, theta: &[f64], time: f64, y: &Self::Observation) -> f64;

    /// Log-likelihood of one measurement; counts one model evaluation.
    fn log_likelihood(&self, theta: &[f64], time: f64, y: &Self::Observation) -> f64 {
        self.counter().add(1);
        self.observation_log_likelihood(theta, time, y)
    }
}

/// Measurements in time order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSeries<O> {
    pub times: Vec<f64>,
    pub observations: Vec<O>,
}

impl<O: Clone> MeasurementSeries<O> {
    pub fn new(times: Vec<f64>, observations: Vec<O>) -> Result<Self> {
        if times.len() != observations.len() {
            return Err(Error::Domain("times and observations differ in length".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("measurement times must be increasing".into()));
        }
        Ok(Self {
            times,
            observations,
        })
    }

    pub fn empty() -> Self {
        Self {
            times: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The first `k` measurements.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.len());
        Self {
            times: self.times[..k].to_vec(),
            observations: self.observations[..k].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Pf,
    Pfgm,
    Tpfgm,
    Ibis,
    Tibis,
    Smc,
}

impl FilterKind {
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Pf => "pf",
            FilterKind::Pfgm => "pfgm",
            FilterKind::Tpfgm => "tpfgm",
            FilterKind::Ibis => "ibis",
            FilterKind::Tibis => "tibis",
            FilterKind::Smc => "smc",
        }
    }

    pub fn is_online(&self) -> bool {
        !matches!(self, FilterKind::Smc)
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "pf" => FilterKind::Pf,
            "pfgm" => FilterKind::Pfgm,
            "tpfgm" => FilterKind::Tpfgm,
            "ibis" => FilterKind::Ibis,
            "tibis" => FilterKind::Tibis,
            "smc" => FilterKind::Smc,
            other => return Err(Error::Config(format!("unknown filter '{other}'"))),
        })
    }
}

fn default_resample_fraction() -> f64 {
    0.5
}

fn default_n_gm() -> usize {
    crate::gmm::DEFAULT_COMPONENTS
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// `c` in the resampling threshold `N_T = c * N_par`.
    #[serde(default = "default_resample_fraction")]
    pub resample_fraction: f64,
    /// Mixture components used for resampling and proposals.
    #[serde(default = "default_n_gm")]
    pub n_gm: usize,
    /// Extra Metropolis-Hastings proposals per particle and move.
    #[serde(default)]
    pub burn_in: usize,
    /// Temper the likelihood of a degenerating measurement (PFGM -> tPFGM,
    /// IBIS -> tIBIS).
    #[serde(default)]
    pub tempering: bool,
    #[serde(default)]
    pub seed: u64,
    /// Store posterior correlation matrices in the step records.
    #[serde(default = "default_true")]
    pub track_correlation: bool,
}

impl FilterConfig {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            resample_fraction: default_resample_fraction(),
            n_gm: default_n_gm(),
            burn_in: 0,
            tempering: false,
            seed,
            track_correlation: true,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.resample_fraction * self.n_particles as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::Config("n_particles must be at least 2".into()));
        }
        if !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return Err(Error::Config("resample_fraction must lie in (0, 1]".into()));
        }
        let nt = self.threshold();
        if !(1.0..=self.n_particles as f64).contains(&nt) {
            return Err(Error::Config(format!("threshold {nt} outside [1, N_par]")));
        }
        if self.n_gm == 0 {
            return Err(Error::Config("n_gm must be positive".into()));
        }
        Ok(())
    }
}

/// Posterior summary after assimilating `step` measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
    #[serde(skip)]
    pub correlation: Option<DMatrix<f64>>,
    /// ESS right after reweighting with the new measurement, before any
    /// resampling.
    pub ess: f64,
    pub resample_events: usize,
    /// Tempering exponents visited in this step, ending at 1.
    pub ladder: Vec<f64>,
    /// ESS after the reweighting at each rung of `ladder`.
    pub ladder_ess: Vec<f64>,
    pub acceptance_rates: Vec<f64>,
    pub gmm_fallbacks: usize,
    /// Cumulative model evaluations at the end of the step.
    pub evaluations: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FilterReport {
    pub kind: FilterKind,
    pub config: FilterConfig,
    pub threshold: f64,
    /// Record 0 summarizes the prior ensemble.
    pub steps: Vec<StepRecord>,
    pub em_fits: usize,
    pub em_non_monotone: usize,
    pub total_evaluations: u64,
    #[serde(skip)]
    pub final_ensemble: WeightedEnsemble,
}

impl FilterReport {
    pub fn last(&self) -> &StepRecord {
        self.steps.last().expect("reports always hold the prior record")
    }

    pub fn resample_events(&self) -> usize {
        self.steps.iter().map(|s| s.resample_events).sum()
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.acceptance_rates.iter().copied()).collect()
    }
}

/// Dispatches to the filter named by `kind`.
pub fn run_filter<M: DeteriorationModel>(
    kind: FilterKind,
    model: &M,
    data: &MeasurementSeries<M::Observation>,
    config: &FilterConfig,
) -> Result<FilterReport> {
    match kind {
        FilterKind::Pf => pf_run(model, data, config),
        FilterKind::Pfgm => pfgm_run(model, data, config),
        FilterKind::Tpfgm => tpfgm_run(model, data, config),
        FilterKind::Ibis => ibis_run(model, data, config),
        FilterKind::Tibis => tibis_run(model, data, config),
        FilterKind::Smc => smc_run(model, data, config),
    }
}
