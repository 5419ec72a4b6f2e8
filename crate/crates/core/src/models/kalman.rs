//! Exact Gaussian posteriors of the corrosion parameters by sequential
//! Kalman updates (no process noise, log-scale measurements).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::corrosion::{prior_moments, CorrosionDataset, Geometry, SensorLayout};
use crate::error::{Error, Result};
use crate::output::{read_json, write_json};
use crate::prob::MeasurementError;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub year: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn std(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn correlation(&self) -> DMatrix<f64> {
        let s = self.std();
        DMatrix::from_fn(s.len(), s.len(), |i, j| self.covariance[(i, j)] / (s[i] * s[j]))
    }
}

/// Serialized form: packed lower triangle, row by row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackedPosterior {
    pub year: f64,
    pub mean: Vec<f64>,
    pub covariance_lower: Vec<f64>,
}

impl From<&GaussianPosterior> for PackedPosterior {
    fn from(p: &GaussianPosterior) -> Self {
        let d = p.mean.len();
        let mut packed = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in 0..=i {
                packed.push(p.covariance[(i, j)]);
            }
        }
        Self {
            year: p.year,
            mean: p.mean.iter().copied().collect(),
            covariance_lower: packed,
        }
    }
}

impl TryFrom<&PackedPosterior> for GaussianPosterior {
    type Error = Error;

    fn try_from(p: &PackedPosterior) -> Result<Self> {
        let d = p.mean.len();
        if p.covariance_lower.len() != d * (d + 1) / 2 {
            return Err(Error::Domain("packed covariance has the wrong length".into()));
        }
        let mut cov = DMatrix::zeros(d, d);
        let mut k = 0;
        for i in 0..d {
            for j in 0..=i {
                cov[(i, j)] = p.covariance_lower[k];
                cov[(j, i)] = p.covariance_lower[k];
                k += 1;
            }
        }
        Ok(Self {
            year: p.year,
            mean: DVector::from_column_slice(&p.mean),
            covariance: cov,
        })
    }
}

/// Sequential scalar updates with rows `h = e(ln A_i) + ln(t) e(B_i)`, one
/// per sensor and year. Returns the posterior after each year.
pub fn kalman_filter(
    prior_mean: DVector<f64>,
    prior_cov: DMatrix<f64>,
    layout: &SensorLayout,
    years: &[f64],
    ln_y: &[Vec<f64>],
    err: &MeasurementError,
) -> Result<Vec<GaussianPosterior>> {
    let d = prior_mean.len();
    let m = d / 2;
    if prior_cov.shape() != (d, d) || years.len() != ln_y.len() {
        return Err(Error::Domain("Kalman inputs disagree in size".into()));
    }
    if layout.elements.iter().any(|&i| i >= m) {
        return Err(Error::Domain("sensor element outside the parameter field".into()));
    }
    let r = err.sigma_log * err.sigma_log;
    let mut mean = prior_mean;
    let mut cov = prior_cov;
    let mut out = Vec::with_capacity(years.len());
    for (&t, row) in years.iter().zip(ln_y) {
        if row.len() != layout.len() {
            return Err(Error::Domain("measurement row does not match the layout".into()));
        }
        let ln_t = t.ln();
        for (&y, &i) in row.iter().zip(&layout.elements) {
            let (a, b) = (i, m + i);
            let ph = cov.column(a) + cov.column(b) * ln_t;
            let s = ph[a] + ph[b] * ln_t + r;
            if !(s > 0.0) {
                return Err(Error::Linalg(format!("innovation variance {s} at year {t}")));
            }
            let innovation = y - err.mu_log - (mean[a] + mean[b] * ln_t);
            let gain = &ph / s;
            mean += &gain * innovation;
            cov -= &gain * ph.transpose();
            cov = (&cov + cov.transpose()) * 0.5;
        }
        out.push(GaussianPosterior {
            year: t,
            mean: mean.clone(),
            covariance: cov.clone(),
        });
    }
    Ok(out)
}

/// Kalman posteriors for the layout's sensors of a corrosion dataset.
pub fn kalman_reference(
    data: &CorrosionDataset,
    geometry: &Geometry,
    layout: &SensorLayout,
) -> Result<Vec<GaussianPosterior>> {
    let (mean, cov) = prior_moments(geometry);
    let series = data.series(layout)?;
    kalman_filter(mean, cov, layout, &series.times, &series.observations, &data.error)
        .map_err(|e| Error::Reference(e.to_string()))
}

pub fn write_posteriors(path: &Path, posteriors: &[GaussianPosterior]) -> Result<()> {
    let packed: Vec<PackedPosterior> = posteriors.iter().map(PackedPosterior::from).collect();
    write_json(path, &packed)
}

pub fn read_posteriors(path: &Path) -> Result<Vec<GaussianPosterior>> {
    let packed: Vec<PackedPosterior> = read_json(path)?;
    packed.iter().map(GaussianPosterior::try_from).collect()
}
