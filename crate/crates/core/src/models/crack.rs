//! Paris-Erdogan fatigue crack growth observed through a multiplicative
//! lognormal measurement error.
//!
//! Parameters are ordered `[a0, delta_s, c_ln, m]`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{DeteriorationModel, EvalCounter, MeasurementSeries};
use crate::output::{csv_writer, fmt_sci, parse_float, read_json, write_json};
use crate::prob::{Marginal, MeasurementError, PriorModel};

pub const PARAM_NAMES: [&str; 4] = ["a0", "delta_s", "c_ln", "m"];
pub const THETA_STAR: [f64; 4] = [2.0, 50.0, -33.5, 3.7];
pub const STEPS: usize = 100;
pub const DELTA_N: f64 = 1e5;
pub const ERROR_MEAN: f64 = 1.0;
pub const ERROR_STD: f64 = 0.1508;
/// Proposal budget of the rejection sampler.
pub const DEFAULT_REJECTION_BUDGET: u64 = 10_000_000_000;

const M_SINGULAR_BAND: f64 = 1e-9;

/// Prior of `[a0, delta_s, c_ln, m]`: exponential crack size, normal stress
/// range and a bi-normal `(c_ln, m)` pair with correlation -0.9.
pub fn crack_prior() -> PriorModel {
    let marginals = vec![
        Marginal::Exponential { mean: 1.0 },
        Marginal::Normal { mean: 60.0, std: 10.0 },
        Marginal::Normal { mean: -33.0, std: 0.47 },
        Marginal::Normal { mean: 3.5, std: 0.3 },
    ];
    let mut corr = DMatrix::identity(4, 4);
    corr[(2, 3)] = -0.9;
    corr[(3, 2)] = -0.9;
    PriorModel::new(marginals, corr).expect("crack prior correlation is positive definite")
}

pub fn crack_error() -> MeasurementError {
    MeasurementError::from_moments(ERROR_MEAN, ERROR_STD).expect("valid moments")
}

/// `ln a(n)` from the closed-form Paris-Erdogan solution, `None` once the
/// crack has diverged (non-positive bracket) or for non-physical inputs.
pub fn crack_log_length(n: f64, theta: &[f64]) -> Option<f64> {
    let [a0, ds, c_ln, m] = [theta[0], theta[1], theta[2], theta[3]];
    if !(a0 > 0.0) || !(ds > 0.0) || !(n >= 0.0) {
        return None;
    }
    if n == 0.0 {
        return Some(a0.ln());
    }
    let log_rate = c_ln + m * ds.ln() + 0.5 * m * std::f64::consts::PI.ln();
    if (m - 2.0).abs() < M_SINGULAR_BAND {
        let v = a0.ln() + log_rate.exp() * n;
        return v.is_finite().then_some(v);
    }
    let e = 1.0 - 0.5 * m;
    let bracket = e * log_rate.exp() * n + a0.powf(e);
    if !(bracket > 0.0) || !bracket.is_finite() {
        return None;
    }
    let v = bracket.ln() / e;
    v.is_finite().then_some(v)
}

/// Crack length after `n` cycles.
pub fn crack_length(n: f64, theta: &[f64]) -> Result<f64> {
    if n < 0.0 || theta.len() != 4 {
        return Err(Error::Domain("crack_length needs n >= 0 and four parameters".into()));
    }
    if n == 0.0 {
        return Ok(theta[0]);
    }
    crack_log_length(n, theta)
        .map(f64::exp)
        .ok_or_else(|| Error::Divergence(format!("crack diverged before n = {n}")))
}

/// Log-likelihood of a crack measurement `y`; `-inf` for a diverged model.
pub fn crack_log_likelihood(y: f64, n: f64, theta: &[f64], err: &MeasurementError) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("crack measurement must be positive, got {y}")));
    }
    Ok(match crack_log_length(n, theta) {
        Some(ln_a) => err.log_density(y.ln() - ln_a),
        None => f64::NEG_INFINITY,
    })
}

/// The crack growth model bound to its prior and measurement error.
#[derive(Debug)]
pub struct CrackModel {
    pub prior: PriorModel,
    pub error: MeasurementError,
    counter: EvalCounter,
}

impl CrackModel {
    pub fn new(prior: PriorModel, error: MeasurementError) -> Self {
        Self {
            prior,
            error,
            counter: EvalCounter::new(),
        }
    }

    pub fn standard() -> Self {
        Self::new(crack_prior(), crack_error())
    }
}

impl DeteriorationModel for CrackModel {
    /// Measured crack length (mm).
    type Observation = f64;

    fn prior(&self) -> &PriorModel {
        &self.prior
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    fn predict(&self, theta: &[f64], time: f64) -> Option<Vec<f64>> {
        crack_log_length(time, theta).map(|l| vec![l.exp()])
    }

    fn observation_log_likelihood(&self, theta: &[f64], time: f64, y: &f64) -> f64 {
        if !(*y > 0.0) {
            return f64::NEG_INFINITY;
        }
        match crack_log_length(time, theta) {
            Some(ln_a) => self.error.log_density(y.ln() - ln_a),
            None => f64::NEG_INFINITY,
        }
    }
}

/// Synthetic monitoring data for a known parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrackDataset {
    pub theta_star: Vec<f64>,
    pub error: MeasurementError,
    pub delta_n: f64,
    pub seed: u64,
    #[serde(skip)]
    pub cycles: Vec<f64>,
    #[serde(skip)]
    pub a_true: Vec<f64>,
    #[serde(skip)]
    pub y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CrackRow {
    k: usize,
    n: String,
    a_true: String,
    y: String,
}

/// Draws `y_k = a(k delta_n) exp(eps_k)` for `k = 1..=steps`.
pub fn generate_crack_dataset(
    theta_star: &[f64],
    error: MeasurementError,
    steps: usize,
    delta_n: f64,
    seed: u64,
) -> Result<CrackDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(error.mu_log, error.sigma_log)
        .map_err(|e| Error::Domain(e.to_string()))?;
    let mut cycles = Vec::with_capacity(steps);
    let mut a_true = Vec::with_capacity(steps);
    let mut y = Vec::with_capacity(steps);
    for k in 1..=steps {
        let n = k as f64 * delta_n;
        let ln_a = crack_log_length(n, theta_star).ok_or_else(|| {
            Error::Reference(format!("truth trajectory diverges at step {k}"))
        })?;
        cycles.push(n);
        a_true.push(ln_a.exp());
        y.push((ln_a + noise.sample(&mut rng)).exp());
    }
    Ok(CrackDataset {
        theta_star: theta_star.to_vec(),
        error,
        delta_n,
        seed,
        cycles,
        a_true,
        y,
    })
}

impl CrackDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn series(&self) -> MeasurementSeries<f64> {
        MeasurementSeries {
            times: self.cycles.clone(),
            observations: self.y.clone(),
        }
    }

    /// Writes `path` (CSV) and the JSON sidecar next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        for k in 0..self.len() {
            w.serialize(CrackRow {
                k: k + 1,
                n: fmt_sci(self.cycles[k]),
                a_true: fmt_sci(self.a_true[k]),
                y: fmt_sci(self.y[k]),
            })?;
        }
        w.flush()?;
        write_json(&sidecar_path(path), self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut ds: CrackDataset = read_json(&sidecar_path(path))?;
        let mut r = csv::Reader::from_path(path)?;
        for (i, row) in r.deserialize::<CrackRow>().enumerate() {
            let row = row?;
            let parse = |s: &str| {
                parse_float(s).ok_or_else(|| Error::Domain(format!("bad number '{s}' in {path:?}")))
            };
            if row.k != i + 1 {
                return Err(Error::Domain(format!("crack rows out of order at k = {}", row.k)));
            }
            let y = parse(&row.y)?;
            if !(y > 0.0) {
                return Err(Error::Domain(format!("non-positive measurement at k = {}", row.k)));
            }
            ds.cycles.push(parse(&row.n)?);
            ds.a_true.push(parse(&row.a_true)?);
            ds.y.push(y);
        }
        Ok(ds)
    }
}

/// `data.csv` -> `data.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Independent posterior draws given `y_1..y_k`.
#[derive(Clone, Debug)]
pub struct RejectionSample {
    pub dim: usize,
    /// Row-major accepted draws.
    pub samples: Vec<f64>,
    pub proposals: u64,
    pub acceptance_rate: f64,
}

impl RejectionSample {
    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for row in self.samples.chunks_exact(self.dim) {
            for (mj, v) in m.iter_mut().zip(row) {
                *mj += v / n;
            }
        }
        m
    }

    /// Sample standard deviations (denominator `n - 1`).
    pub fn std(&self) -> Vec<f64> {
        let mean = self.mean();
        let n = self.len() as f64;
        let mut s = vec![0.0; self.dim];
        for row in self.samples.chunks_exact(self.dim) {
            for j in 0..self.dim {
                s[j] += (row[j] - mean[j]).powi(2);
            }
        }
        s.iter().map(|v| (v / (n - 1.0)).sqrt()).collect()
    }
}

const REJECTION_BATCH: u64 = 1 << 16;

/// Rejection sampling with the prior as envelope: a prior draw is accepted
/// with probability `exp(sum_j (l_j - l_max))` where `l_max` is the
/// per-measurement supremum of the log-density.
///
/// Proposals are drawn in fixed-size batches with one RNG stream per batch,
/// so the result depends only on `seed`, not on the thread count.
pub fn rejection_sample_posterior(
    data: &CrackDataset,
    k: usize,
    n_samples: usize,
    prior: &PriorModel,
    seed: u64,
    max_proposals: u64,
) -> Result<RejectionSample> {
    if k == 0 || k > data.len() {
        return Err(Error::Domain(format!("k must lie in 1..={}", data.len())));
    }
    let err = data.error;
    let l_max = err.max_log_density();
    let obs: Vec<(f64, f64)> = data.cycles[..k].iter().zip(&data.y[..k]).map(|(&n, &y)| (n, y.ln())).collect();
    let dim = prior.dim();
    let batch = |index: u64| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let draws = prior.sample(REJECTION_BATCH as usize, &mut rng);
        let mut accepted = Vec::new();
        for theta in draws.chunks_exact(dim) {
            let log_u = rng.random::<f64>().ln();
            let mut log_ratio = 0.0;
            let mut ok = true;
            for &(n, ln_y) in &obs {
                match crack_log_length(n, theta) {
                    Some(ln_a) => log_ratio += err.log_density(ln_y - ln_a) - l_max,
                    None => {
                        ok = false;
                        break;
                    }
                }
                // Every term is non-positive, so the running sum only falls.
                if log_ratio <= log_u {
                    ok = false;
                    break;
                }
            }
            if ok {
                accepted.extend_from_slice(theta);
            }
        }
        accepted
    };

    let per_round = (rayon::current_num_threads() as u64).max(1) * 4;
    let target = n_samples * dim;
    let mut samples = Vec::with_capacity(target);
    let mut next_batch = 0u64;
    let mut proposals = 0u64;
    let mut accepted = 0u64;
    while samples.len() < target {
        if proposals >= max_proposals {
            return Err(Error::Infeasible(format!(
                "rejection sampler accepted {accepted} of {proposals} proposals for k = {k}"
            )));
        }
        let rounds: Vec<Vec<f64>> = (next_batch..next_batch + per_round)
            .into_par_iter()
            .map(batch)
            .collect();
        for acc in rounds {
            if samples.len() >= target {
                break;
            }
            proposals += REJECTION_BATCH;
            accepted += (acc.len() / dim) as u64;
            let take = (target - samples.len()).min(acc.len());
            samples.extend_from_slice(&acc[..take]);
        }
        next_batch += per_round;
    }
    Ok(RejectionSample {
        dim,
        samples,
        proposals,
        acceptance_rate: accepted as f64 / proposals as f64,
    })
}
