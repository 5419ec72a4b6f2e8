use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::prior::PriorModel;
use super::weights::{ess, normalize_log_weights, uniform_log_weights};
use crate::error::{Error, Result};

/// Weighted particle approximation of a posterior.
///
/// Particles are stored row-major: particle `i` occupies
/// `particles[i * dim .. (i + 1) * dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedEnsemble {
    dim: usize,
    particles: Vec<f64>,
    log_weights: Vec<f64>,
    /// Running log-likelihood `ln L(y_1:n | theta_i)` when a filter tracks it.
    pub cached_log_likelihoods: Option<Vec<f64>>,
}

impl WeightedEnsemble {
    /// Uniformly weighted ensemble.
    pub fn new(dim: usize, particles: Vec<f64>) -> Result<Self> {
        if dim == 0 || particles.len() % dim != 0 {
            return Err(Error::Domain(format!(
                "{} values do not form rows of dimension {dim}",
                particles.len()
            )));
        }
        let n = particles.len() / dim;
        if n < 2 {
            return Err(Error::Domain("an ensemble needs at least two particles".into()));
        }
        if particles.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("particles must be finite".into()));
        }
        Ok(Self {
            dim,
            particles,
            log_weights: uniform_log_weights(n),
            cached_log_likelihoods: None,
        })
    }

    pub fn with_log_weights(dim: usize, particles: Vec<f64>, log_weights: &[f64]) -> Result<Self> {
        let mut e = Self::new(dim, particles)?;
        e.set_log_weights(log_weights)?;
        Ok(e)
    }

    pub fn from_prior<R: Rng + ?Sized>(prior: &PriorModel, n: usize, rng: &mut R) -> Result<Self> {
        Self::new(prior.dim(), prior.sample(n, rng))
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particle_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.particles[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> &[f64] {
        &self.particles
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.particles.chunks_exact(self.dim)
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Normalizes and stores the given log-weights.
    pub fn set_log_weights(&mut self, log_weights: &[f64]) -> Result<()> {
        if log_weights.len() != self.len() {
            return Err(Error::Domain("log-weight length mismatch".into()));
        }
        self.log_weights = normalize_log_weights(log_weights)?;
        Ok(())
    }

    pub fn reset_weights(&mut self) {
        self.log_weights = uniform_log_weights(self.len());
    }

    pub fn ess(&self) -> f64 {
        ess(&self.log_weights).expect("ensemble weights stay normalized")
    }

    /// Values of parameter `j` across particles.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter().map(|p| p[j]).collect()
    }

    /// Multinomial resampling; cached log-likelihoods follow their particles.
    pub fn resample_multinomial<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self> {
        let idx = multinomial_indices(&self.log_weights, self.len(), rng)?;
        Ok(self.select(&idx))
    }

    /// Uniformly weighted ensemble made of the rows listed in `idx`.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut particles = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            particles.extend_from_slice(self.particle(i));
        }
        Self {
            dim: self.dim,
            particles,
            log_weights: uniform_log_weights(idx.len()),
            cached_log_likelihoods: self
                .cached_log_likelihoods
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i]).collect()),
        }
    }

    pub fn weighted_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (p, lw) in self.iter().zip(&self.log_weights) {
            let w = lw.exp();
            for (m, x) in mean.iter_mut().zip(p) {
                *m += w * x;
            }
        }
        mean
    }

    /// Weighted (population) covariance matrix.
    pub fn weighted_covariance(&self) -> DMatrix<f64> {
        let mean = self.weighted_mean();
        let n = self.len();
        let d = self.dim;
        // Rows scaled by sqrt(w) so the covariance is one matrix product.
        let scaled = DMatrix::from_fn(d, n, |j, i| {
            (0.5 * self.log_weights[i]).exp() * (self.particles[i * d + j] - mean[j])
        });
        &scaled * scaled.transpose()
    }

    pub fn weighted_std(&self) -> Vec<f64> {
        let mean = self.weighted_mean();
        let mut var = vec![0.0; self.dim];
        for (p, lw) in self.iter().zip(&self.log_weights) {
            let w = lw.exp();
            for j in 0..self.dim {
                var[j] += w * (p[j] - mean[j]).powi(2);
            }
        }
        var.into_iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Weighted correlation matrix; entries involving a zero-variance
    /// parameter are set to zero (unit diagonal is kept).
    pub fn weighted_correlation(&self) -> DMatrix<f64> {
        let cov = self.weighted_covariance();
        let d = self.dim;
        let sd: Vec<f64> = (0..d).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
        DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0
            } else if sd[i] > 0.0 && sd[j] > 0.0 {
                (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
    }

    pub fn weighted_quantile(&self, param: usize, p: f64) -> f64 {
        weighted_quantile(&self.column(param), &self.log_weights, p)
    }
}

/// Smallest value whose cumulative normalized weight reaches `p`.
pub fn weighted_quantile(values: &[f64], log_weights: &[f64], p: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut cum = 0.0;
    for &i in &order {
        cum += log_weights[i].exp();
        if cum >= p - 1e-12 {
            return values[i];
        }
    }
    values[*order.last().expect("non-empty values")]
}

/// `n` indices drawn with replacement with probabilities `exp(log_weights)`.
pub fn multinomial_indices<R: Rng + ?Sized>(
    log_weights: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(log_weights.iter().map(|lw| lw.exp()))
        .map_err(|e| Error::Contract(format!("cannot resample: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}
