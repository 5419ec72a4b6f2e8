//! Corrosion depth `D(t, x) = A(x) t^B(x)` along a beam, with `ln A` and `B`
//! independent Gaussian random fields discretized at element midpoints.
//!
//! Parameters are ordered `[ln A_1..ln A_m, B_1..B_m]`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::crack::sidecar_path;
use super::kl::KlBasis;
use crate::error::{Error, Result};
use crate::filters::{DeteriorationModel, EvalCounter, MeasurementSeries};
use crate::output::{csv_writer, fmt_sci, parse_float, read_json, write_json};
use crate::prob::{lognormal_params_from_moments, Marginal, MeasurementError, PriorModel};

pub const BEAM_LENGTH: f64 = 10.0;
pub const CORR_LENGTH: f64 = 2.0;
pub const YEARS: usize = 50;
pub const A_MEAN: f64 = 0.8;
pub const A_STD: f64 = 0.24;
pub const B_MEAN: f64 = 0.8;
pub const B_STD: f64 = 0.12;
pub const ERROR_MEAN: f64 = 1.0;
pub const ERROR_STD: f64 = 0.101;
/// Ten sensors at the centres of ten equal beam segments.
pub const CANONICAL_SENSORS: [f64; 10] = [0.5, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5, 8.5, 9.5];

pub fn corrosion_error() -> MeasurementError {
    MeasurementError::from_moments(ERROR_MEAN, ERROR_STD).expect("valid moments")
}

/// Gaussian parameters `(mean, std)` of `ln A`.
pub fn ln_a_params() -> (f64, f64) {
    let p = lognormal_params_from_moments(A_MEAN, A_STD).expect("valid moments");
    (p.mu_log, p.sigma_log)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub n_elements: usize,
    pub beam_length: f64,
    pub corr_length: f64,
}

impl Geometry {
    pub fn new(n_elements: usize) -> Result<Self> {
        Self::with_lengths(n_elements, BEAM_LENGTH, CORR_LENGTH)
    }

    pub fn with_lengths(n_elements: usize, beam_length: f64, corr_length: f64) -> Result<Self> {
        if n_elements == 0 || !(beam_length > 0.0) || !(corr_length > 0.0) {
            return Err(Error::Domain("geometry needs m >= 1 and positive lengths".into()));
        }
        Ok(Self {
            n_elements,
            beam_length,
            corr_length,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.n_elements
    }

    pub fn element_length(&self) -> f64 {
        self.beam_length / self.n_elements as f64
    }

    pub fn midpoints(&self) -> Vec<f64> {
        let h = self.element_length();
        (0..self.n_elements).map(|i| (i as f64 + 0.5) * h).collect()
    }

    /// Element containing `x`; a point on a shared boundary belongs to the
    /// lower-indexed element.
    pub fn element_of(&self, x: f64) -> Result<usize> {
        if !(0.0..=self.beam_length).contains(&x) {
            return Err(Error::Domain(format!("position {x} outside the beam")));
        }
        let i = (x / self.element_length()).ceil() as usize;
        Ok(i.saturating_sub(1).min(self.n_elements - 1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    /// Indices into [`CANONICAL_SENSORS`].
    pub sensors: Vec<usize>,
    pub positions: Vec<f64>,
    pub elements: Vec<usize>,
}

impl SensorLayout {
    /// Layouts with 2 (4th, 7th), 4 (1st, 4th, 7th, 10th) or all 10 sensors.
    pub fn canonical(n_sensors: usize, geometry: &Geometry) -> Result<Self> {
        let sensors = match n_sensors {
            0 => vec![],
            2 => vec![3, 6],
            4 => vec![0, 3, 6, 9],
            10 => (0..10).collect(),
            n => return Err(Error::Config(format!("no canonical layout with {n} sensors"))),
        };
        Self::from_sensors(sensors, geometry)
    }

    pub fn from_sensors(sensors: Vec<usize>, geometry: &Geometry) -> Result<Self> {
        let positions: Vec<f64> = sensors
            .iter()
            .map(|&s| {
                CANONICAL_SENSORS
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("sensor index {s} out of range")))
            })
            .collect::<Result<_>>()?;
        let elements = positions.iter().map(|&x| geometry.element_of(x)).collect::<Result<_>>()?;
        Ok(Self {
            sensors,
            positions,
            elements,
        })
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }
}

/// `exp(-|x_i - x_j| / corr_length)`.
pub fn exponential_correlation(x: &[f64], corr_length: f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), x.len(), |i, j| (-(x[i] - x[j]).abs() / corr_length).exp())
}

/// Mean and covariance of the Gaussian prior over `[ln A, B]`.
pub fn prior_moments(geometry: &Geometry) -> (DVector<f64>, DMatrix<f64>) {
    let m = geometry.n_elements;
    let (mu_a, sd_a) = ln_a_params();
    let corr = exponential_correlation(&geometry.midpoints(), geometry.corr_length);
    let mut mean = DVector::zeros(2 * m);
    let mut cov = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        mean[i] = mu_a;
        mean[m + i] = B_MEAN;
        for j in 0..m {
            cov[(i, j)] = sd_a * sd_a * corr[(i, j)];
            cov[(m + i, m + j)] = B_STD * B_STD * corr[(i, j)];
        }
    }
    (mean, cov)
}

pub fn build_prior(geometry: &Geometry) -> Result<PriorModel> {
    let m = geometry.n_elements;
    let (mu_a, sd_a) = ln_a_params();
    let mut marginals = vec![Marginal::Normal { mean: mu_a, std: sd_a }; m];
    marginals.extend(vec![Marginal::Normal { mean: B_MEAN, std: B_STD }; m]);
    let corr = exponential_correlation(&geometry.midpoints(), geometry.corr_length);
    let mut full = DMatrix::zeros(2 * m, 2 * m);
    full.view_mut((0, 0), (m, m)).copy_from(&corr);
    full.view_mut((m, m), (m, m)).copy_from(&corr);
    PriorModel::new(marginals, full)
}

/// `exp(ln A_i) t^{B_i}` for element `element` of an `m`-element field.
pub fn corrosion_depth(theta: &[f64], t: f64, element: usize) -> f64 {
    let m = theta.len() / 2;
    if t == 0.0 {
        return 0.0;
    }
    (theta[element] + theta[m + element] * t.ln()).exp()
}

/// Sum over sensors of Gaussian log-densities of `ln y` around
/// `ln A_i + B_i ln t + mu_eps`.
pub fn corrosion_log_likelihood(
    log_y: &[f64],
    t: f64,
    theta: &[f64],
    layout: &SensorLayout,
    err: &MeasurementError,
) -> Result<f64> {
    if log_y.len() != layout.len() {
        return Err(Error::Domain(format!(
            "{} measurements for {} sensors",
            log_y.len(),
            layout.len()
        )));
    }
    if !(t > 0.0) {
        return Err(Error::Domain("measurement time must be positive".into()));
    }
    Ok(sensor_sum(log_y, t, theta, layout, err))
}

fn sensor_sum(log_y: &[f64], t: f64, theta: &[f64], layout: &SensorLayout, err: &MeasurementError) -> f64 {
    let m = theta.len() / 2;
    let ln_t = t.ln();
    log_y
        .iter()
        .zip(&layout.elements)
        .map(|(&ly, &i)| err.log_density(ly - theta[i] - theta[m + i] * ln_t))
        .sum()
}

#[derive(Debug)]
pub struct CorrosionModel {
    pub geometry: Geometry,
    pub layout: SensorLayout,
    pub prior: PriorModel,
    pub error: MeasurementError,
    counter: EvalCounter,
}

impl CorrosionModel {
    pub fn new(n_elements: usize, n_sensors: usize) -> Result<Self> {
        let geometry = Geometry::new(n_elements)?;
        let layout = SensorLayout::canonical(n_sensors, &geometry)?;
        Ok(Self {
            prior: build_prior(&geometry)?,
            geometry,
            layout,
            error: corrosion_error(),
            counter: EvalCounter::new(),
        })
    }
}

impl DeteriorationModel for CorrosionModel {
    /// Log measured depth per sensor of the layout.
    type Observation = Vec<f64>;

    fn prior(&self) -> &PriorModel {
        &self.prior
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    fn predict(&self, theta: &[f64], time: f64) -> Option<Vec<f64>> {
        Some(self.layout.elements.iter().map(|&i| corrosion_depth(theta, time, i)).collect())
    }

    fn observation_log_likelihood(&self, theta: &[f64], time: f64, y: &Vec<f64>) -> f64 {
        sensor_sum(y, time, theta, &self.layout, &self.error)
    }
}

/// Truth fields on the fine KL grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthGrid {
    pub nodes: Vec<f64>,
    pub ln_a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrosionDataset {
    pub beam_length: f64,
    pub corr_length: f64,
    pub sensor_positions: Vec<f64>,
    pub years: Vec<f64>,
    pub seed: u64,
    /// RNG stream used for the KL coefficients; measurement noise uses the
    /// next one.
    pub field_stream: u64,
    pub n_modes: usize,
    pub error: MeasurementError,
    /// Truth values interpolated at the canonical sensor positions.
    pub ln_a_at_sensors: Vec<f64>,
    pub b_at_sensors: Vec<f64>,
    pub truth: TruthGrid,
    /// `ln_y[year][sensor]` over the canonical sensors.
    #[serde(skip)]
    pub ln_y: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CorrosionRow {
    year: usize,
    sensor: usize,
    ln_y: String,
}

/// Truth fields from the KL expansion and 50 years of measurements at the
/// ten canonical sensors.
pub fn generate_corrosion_truth(seed: u64) -> Result<CorrosionDataset> {
    let basis = KlBasis::standard()?;
    let n_modes = basis.n_modes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let xi: Vec<f64> = (0..2 * n_modes).map(|_| StandardNormal.sample(&mut rng)).collect();
    let (mu_a, sd_a) = ln_a_params();
    let ln_a: Vec<f64> = basis.synthesize(&xi[..n_modes])?.iter().map(|z| mu_a + sd_a * z).collect();
    let b: Vec<f64> = basis.synthesize(&xi[n_modes..])?.iter().map(|z| B_MEAN + B_STD * z).collect();
    let ln_a_s: Vec<f64> = CANONICAL_SENSORS.iter().map(|&x| basis.interpolate(&ln_a, x)).collect();
    let b_s: Vec<f64> = CANONICAL_SENSORS.iter().map(|&x| basis.interpolate(&b, x)).collect();
    let error = corrosion_error();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let years: Vec<f64> = (1..=YEARS).map(|t| t as f64).collect();
    let ln_y = years
        .iter()
        .map(|&t| {
            (0..CANONICAL_SENSORS.len())
                .map(|l| {
                    let eps: f64 = StandardNormal.sample(&mut noise_rng);
                    ln_a_s[l] + b_s[l] * t.ln() + error.mu_log + error.sigma_log * eps
                })
                .collect()
        })
        .collect();
    Ok(CorrosionDataset {
        beam_length: basis.beam_length,
        corr_length: basis.corr_length,
        sensor_positions: CANONICAL_SENSORS.to_vec(),
        years,
        seed,
        field_stream: 0,
        n_modes,
        error,
        ln_a_at_sensors: ln_a_s,
        b_at_sensors: b_s,
        truth: TruthGrid {
            nodes: basis.nodes.clone(),
            ln_a,
            b,
        },
        ln_y,
    })
}

impl CorrosionDataset {
    /// Measurements of the layout's sensors.
    pub fn series(&self, layout: &SensorLayout) -> Result<MeasurementSeries<Vec<f64>>> {
        if layout.sensors.iter().any(|&s| s >= self.sensor_positions.len()) {
            return Err(Error::Config("layout refers to a missing sensor".into()));
        }
        let obs = self
            .ln_y
            .iter()
            .map(|row| layout.sensors.iter().map(|&s| row[s]).collect())
            .collect();
        MeasurementSeries::new(self.years.clone(), obs)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        for (t, row) in self.ln_y.iter().enumerate() {
            for (s, &v) in row.iter().enumerate() {
                w.serialize(CorrosionRow {
                    year: t + 1,
                    sensor: s + 1,
                    ln_y: fmt_sci(v),
                })?;
            }
        }
        w.flush()?;
        write_json(&sidecar_path(path), self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut ds: CorrosionDataset = read_json(&sidecar_path(path))?;
        let n_s = ds.sensor_positions.len();
        ds.ln_y = vec![vec![f64::NAN; n_s]; ds.years.len()];
        let mut r = csv::Reader::from_path(path)?;
        for row in r.deserialize::<CorrosionRow>() {
            let row = row?;
            if row.year == 0 || row.year > ds.years.len() || row.sensor == 0 || row.sensor > n_s {
                return Err(Error::Domain(format!(
                    "row (year {}, sensor {}) outside the dataset",
                    row.year, row.sensor
                )));
            }
            ds.ln_y[row.year - 1][row.sensor - 1] = parse_float(&row.ln_y)
                .ok_or_else(|| Error::Domain(format!("bad number '{}'", row.ln_y)))?;
        }
        if ds.ln_y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("corrosion dataset is missing measurements".into()));
        }
        Ok(ds)
    }
}
