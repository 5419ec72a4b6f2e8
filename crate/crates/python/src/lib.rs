//! Python module `pyseqbayes`.

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seqbayes::harness::{run_experiment as run_experiment_rs, write_outputs, ExperimentConfig};
use seqbayes::metrics;
use seqbayes::models::corrosion::{generate_corrosion_truth, CorrosionModel};
use seqbayes::models::crack::{self, CrackModel, DEFAULT_REJECTION_BUDGET, DELTA_N, STEPS, THETA_STAR};
use seqbayes::models::kalman::kalman_reference as kalman_reference_rs;
use seqbayes::output::to_json_string;
use seqbayes::prob;
use seqbayes::{run_filter, Error, FilterConfig, FilterKind, FilterReport, GaussianMixture};

create_exception!(pyseqbayes, SeqbayesError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) => PyValueError::new_err(e.to_string()),
        other => SeqbayesError::new_err(other.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[pyclass(name = "GaussianMixture", module = "pyseqbayes")]
struct PyGaussianMixture {
    inner: GaussianMixture,
}

#[pymethods]
impl PyGaussianMixture {
    /// Weighted EM fit to `samples` (one point per row). Weights default to
    /// uniform.
    #[staticmethod]
    #[pyo3(signature = (samples, log_weights=None, k=8, seed=0))]
    fn fit(samples: Vec<Vec<f64>>, log_weights: Option<Vec<f64>>, k: usize, seed: u64) -> PyResult<Self> {
        let n = samples.len();
        let d = samples.first().map_or(0, Vec::len);
        if samples.iter().any(|s| s.len() != d) {
            return Err(PyValueError::new_err("samples must all have the same length"));
        }
        let x = DMatrix::from_fn(d, n, |j, i| samples[i][j]);
        let lw = log_weights.unwrap_or_else(|| prob::uniform_log_weights(n));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fit = GaussianMixture::fit_em(&x, &lw, k, &mut rng).map_err(to_py)?;
        Ok(Self { inner: fit.mixture })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.means().iter().map(|m| m.iter().copied().collect()).collect()
    }

    #[getter]
    fn covariances(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.covariances().into_iter().map(rows).collect()
    }

    fn log_density(&self, u: Vec<f64>) -> PyResult<f64> {
        if u.len() != self.inner.dim() {
            return Err(PyValueError::new_err("point dimension does not match the mixture"));
        }
        Ok(self.inner.log_density(&u))
    }

    #[pyo3(signature = (n, seed=0))]
    fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.inner.sample(n, &mut rng);
        s.column_iter().map(|c| c.iter().copied().collect()).collect()
    }
}

#[pyclass(name = "FilterReport", module = "pyseqbayes")]
struct PyFilterReport {
    inner: FilterReport,
}

#[pymethods]
impl PyFilterReport {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn total_evaluations(&self) -> u64 {
        self.inner.total_evaluations
    }

    #[getter]
    fn em_fits(&self) -> usize {
        self.inner.em_fits
    }

    #[getter]
    fn em_non_monotone(&self) -> usize {
        self.inner.em_non_monotone
    }

    /// Step indices; step 0 is the prior.
    fn steps(&self) -> Vec<usize> {
        self.inner.steps.iter().map(|s| s.step).collect()
    }

    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.steps.iter().map(|s| s.mean.clone()).collect()
    }

    fn stds(&self) -> Vec<Vec<f64>> {
        self.inner.steps.iter().map(|s| s.std.clone()).collect()
    }

    fn quantiles(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let s = &self.inner.steps;
        (s.iter().map(|r| r.q05.clone()).collect(), s.iter().map(|r| r.q95.clone()).collect())
    }

    fn ess(&self) -> Vec<f64> {
        self.inner.steps.iter().map(|s| s.ess).collect()
    }

    fn evaluations(&self) -> Vec<u64> {
        self.inner.steps.iter().map(|s| s.evaluations).collect()
    }

    fn ladders(&self) -> Vec<Vec<f64>> {
        self.inner.steps.iter().map(|s| s.ladder.clone()).collect()
    }

    fn acceptance_rates(&self) -> Vec<f64> {
        self.inner.acceptance_rates()
    }

    fn final_particles(&self) -> Vec<Vec<f64>> {
        self.inner.final_ensemble.iter().map(<[f64]>::to_vec).collect()
    }

    fn final_log_weights(&self) -> Vec<f64> {
        self.inner.final_ensemble.log_weights().to_vec()
    }

    fn to_json(&self) -> PyResult<String> {
        to_json_string(&self.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "FilterReport(kind='{}', steps={}, evaluations={})",
            self.inner.kind.name(),
            self.inner.steps.len() - 1,
            self.inner.total_evaluations
        )
    }
}

fn filter_config(kind: &str, n_particles: usize, seed: u64, burn_in: usize) -> PyResult<(FilterKind, FilterConfig)> {
    let kind: FilterKind = kind.parse().map_err(to_py)?;
    let mut cfg = FilterConfig::new(n_particles, seed);
    cfg.burn_in = burn_in;
    cfg.tempering = matches!(kind, FilterKind::Tpfgm | FilterKind::Tibis);
    Ok((kind, cfg))
}

#[pyfunction]
fn lognormal_params_from_moments(mean: f64, std: f64) -> PyResult<(f64, f64)> {
    let e = prob::lognormal_params_from_moments(mean, std).map_err(to_py)?;
    Ok((e.mu_log, e.sigma_log))
}

/// Effective sample size of normalized log-weights.
#[pyfunction]
fn ess(log_weights: Vec<f64>) -> PyResult<f64> {
    prob::ess(&log_weights).map_err(to_py)
}

#[pyfunction]
fn log_sum_exp(values: Vec<f64>) -> f64 {
    prob::log_sum_exp(&values)
}

#[pyfunction]
fn weighted_quantile(values: Vec<f64>, log_weights: Vec<f64>, p: f64) -> PyResult<f64> {
    if values.len() != log_weights.len() || values.is_empty() {
        return Err(PyValueError::new_err("values and weights must be non-empty and equally long"));
    }
    Ok(prob::weighted_quantile(&values, &log_weights, p))
}

#[pyfunction]
fn relative_error(reference: f64, estimate: f64) -> PyResult<f64> {
    metrics::relative_error(reference, estimate).map_err(to_py)
}

#[pyfunction]
fn l2_rel_error_norm(reference: Vec<f64>, estimate: Vec<f64>) -> PyResult<f64> {
    metrics::l2_rel_error_norm(&reference, &estimate).map_err(to_py)
}

/// Crack length (mm) after `n` cycles.
#[pyfunction]
fn crack_length(n: f64, theta: Vec<f64>) -> PyResult<f64> {
    crack::crack_length(n, &theta).map_err(to_py)
}

#[pyfunction]
fn crack_log_likelihood(y: f64, n: f64, theta: Vec<f64>) -> PyResult<f64> {
    crack::crack_log_likelihood(y, n, &theta, &crack::crack_error()).map_err(to_py)
}

/// Synthetic crack data as a dict of `cycles`, `a_true` and `y`.
#[pyfunction]
#[pyo3(signature = (seed=1, steps=STEPS))]
fn crack_dataset<'py>(py: Python<'py>, seed: u64, steps: usize) -> PyResult<Bound<'py, PyDict>> {
    let ds = crack::generate_crack_dataset(&THETA_STAR, crack::crack_error(), steps, DELTA_N, seed).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("theta_star", ds.theta_star)?;
    d.set_item("cycles", ds.cycles)?;
    d.set_item("a_true", ds.a_true)?;
    d.set_item("y", ds.y)?;
    Ok(d)
}

/// Runs one filter on a synthetic crack dataset.
#[pyfunction]
#[pyo3(signature = (filter, n_particles, seed=0, steps=STEPS, data_seed=1, burn_in=0))]
fn run_crack_filter(
    py: Python<'_>,
    filter: &str,
    n_particles: usize,
    seed: u64,
    steps: usize,
    data_seed: u64,
    burn_in: usize,
) -> PyResult<PyFilterReport> {
    let (kind, cfg) = filter_config(filter, n_particles, seed, burn_in)?;
    let report = py
        .detach(|| {
            let ds = crack::generate_crack_dataset(&THETA_STAR, crack::crack_error(), steps, DELTA_N, data_seed)?;
            run_filter(kind, &CrackModel::standard(), &ds.series(), &cfg)
        })
        .map_err(to_py)?;
    Ok(PyFilterReport { inner: report })
}

/// Runs one filter on the corrosion case with `m` elements and `n_sensors`
/// sensors.
#[pyfunction]
#[pyo3(signature = (filter, m, n_sensors, n_particles, seed=0, years=50, data_seed=1, burn_in=0))]
#[allow(clippy::too_many_arguments)]
fn run_corrosion_filter(
    py: Python<'_>,
    filter: &str,
    m: usize,
    n_sensors: usize,
    n_particles: usize,
    seed: u64,
    years: usize,
    data_seed: u64,
    burn_in: usize,
) -> PyResult<PyFilterReport> {
    let (kind, cfg) = filter_config(filter, n_particles, seed, burn_in)?;
    let report = py
        .detach(|| {
            let truth = generate_corrosion_truth(data_seed)?;
            let model = CorrosionModel::new(m, n_sensors)?;
            let series = truth.series(&model.layout)?.truncated(years);
            run_filter(kind, &model, &series, &cfg)
        })
        .map_err(to_py)?;
    Ok(PyFilterReport { inner: report })
}

/// Kalman posteriors per year as `(mean, covariance)` pairs.
#[pyfunction]
#[pyo3(signature = (m, n_sensors, data_seed=1))]
fn kalman_reference(py: Python<'_>, m: usize, n_sensors: usize, data_seed: u64) -> PyResult<Vec<(Vec<f64>, Vec<Vec<f64>>)>> {
    let posteriors = py
        .detach(|| {
            let truth = generate_corrosion_truth(data_seed)?;
            let model = CorrosionModel::new(m, n_sensors)?;
            kalman_reference_rs(&truth, &model.geometry, &model.layout)
        })
        .map_err(to_py)?;
    Ok(posteriors
        .iter()
        .map(|p| (p.mean.iter().copied().collect(), rows(&p.covariance)))
        .collect())
}

/// Rejection draws from the crack posterior given `y_1..y_k`; returns the
/// draws and the acceptance rate.
#[pyfunction]
#[pyo3(signature = (k, n_samples, seed=0, data_seed=1, max_proposals=DEFAULT_REJECTION_BUDGET))]
fn rejection_sample(
    py: Python<'_>,
    k: usize,
    n_samples: usize,
    seed: u64,
    data_seed: u64,
    max_proposals: u64,
) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let rs = py
        .detach(|| {
            let ds = crack::generate_crack_dataset(&THETA_STAR, crack::crack_error(), STEPS, DELTA_N, data_seed)?;
            crack::rejection_sample_posterior(&ds, k, n_samples, &crack::crack_prior(), seed, max_proposals)
        })
        .map_err(to_py)?;
    Ok((rs.samples.chunks_exact(rs.dim).map(<[f64]>::to_vec).collect(), rs.acceptance_rate))
}

/// Runs a JSON experiment config and returns `report.json` as a string.
/// Output files are written when `output_dir` is given.
#[pyfunction]
#[pyo3(signature = (config_json, output_dir=None))]
fn run_experiment(py: Python<'_>, config_json: &str, output_dir: Option<std::path::PathBuf>) -> PyResult<String> {
    let cfg: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.detach(|| {
        let res = run_experiment_rs(cfg)?;
        if let Some(dir) = &output_dir {
            write_outputs(&res, dir)?;
        }
        to_json_string(&res.report)
    })
    .map_err(to_py)
}

#[pymodule]
fn pyseqbayes(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SeqbayesError", m.py().get_type::<SeqbayesError>())?;
    m.add("THETA_STAR", THETA_STAR.to_vec())?;
    m.add_class::<PyGaussianMixture>()?;
    m.add_class::<PyFilterReport>()?;
    m.add_function(wrap_pyfunction!(lognormal_params_from_moments, m)?)?;
    m.add_function(wrap_pyfunction!(ess, m)?)?;
    m.add_function(wrap_pyfunction!(log_sum_exp, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    m.add_function(wrap_pyfunction!(l2_rel_error_norm, m)?)?;
    m.add_function(wrap_pyfunction!(crack_length, m)?)?;
    m.add_function(wrap_pyfunction!(crack_log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(crack_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_crack_filter, m)?)?;
    m.add_function(wrap_pyfunction!(run_corrosion_filter, m)?)?;
    m.add_function(wrap_pyfunction!(kalman_reference, m)?)?;
    m.add_function(wrap_pyfunction!(rejection_sample, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
