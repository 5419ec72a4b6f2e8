use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::marginal::Marginal;
use super::normal::LN_SQRT_2PI;
use crate::error::{Error, Result};

/// Jitter added to the correlation diagonal when the first factorization fails.
const CHOLESKY_JITTER: f64 = 1e-10;

/// Joint prior built from marginals coupled through a Gaussian copula.
///
/// The correlation matrix lives in the space of the underlying standard
/// normal quantiles `z_i = Phi^-1(F_i(theta_i))`. Whitening `z` with the
/// Cholesky factor gives independent standard normals `u`, the space in which
/// mixtures are fitted and Metropolis moves are evaluated.
#[derive(Clone, Debug)]
pub struct PriorModel {
    marginals: Vec<Marginal>,
    correlation: DMatrix<f64>,
    cholesky: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct PriorModelRepr {
    marginals: Vec<Marginal>,
    correlation: Vec<Vec<f64>>,
}

impl PriorModel {
    pub fn new(marginals: Vec<Marginal>, correlation: DMatrix<f64>) -> Result<Self> {
        let d = marginals.len();
        if d == 0 {
            return Err(Error::Domain("prior needs at least one parameter".into()));
        }
        for m in &marginals {
            m.validate()?;
        }
        if correlation.nrows() != d || correlation.ncols() != d {
            return Err(Error::Domain(format!(
                "correlation is {}x{}, expected {d}x{d}",
                correlation.nrows(),
                correlation.ncols()
            )));
        }
        for i in 0..d {
            if (correlation[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Domain("correlation diagonal must be 1".into()));
            }
            for j in 0..i {
                if (correlation[(i, j)] - correlation[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Domain("correlation must be symmetric".into()));
                }
            }
        }
        let cholesky = match correlation.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                let jittered = &correlation + DMatrix::identity(d, d) * CHOLESKY_JITTER;
                jittered
                    .cholesky()
                    .ok_or_else(|| Error::Linalg("correlation is not positive definite".into()))?
                    .l()
            }
        };
        Ok(Self {
            marginals,
            correlation,
            cholesky,
        })
    }

    /// Independent marginals.
    pub fn independent(marginals: Vec<Marginal>) -> Result<Self> {
        let d = marginals.len();
        Self::new(marginals, DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    /// `theta -> u`.
    pub fn to_standard_normal(&self, theta: &[f64]) -> Result<DVector<f64>> {
        if theta.len() != self.dim() {
            return Err(Error::Domain(format!(
                "parameter vector has length {}, prior has {}",
                theta.len(),
                self.dim()
            )));
        }
        let mut z = DVector::zeros(self.dim());
        for (i, (m, &x)) in self.marginals.iter().zip(theta).enumerate() {
            z[i] = m.to_z(x)?;
        }
        self.cholesky
            .solve_lower_triangular_mut(&mut z)
            .then_some(z)
            .ok_or_else(|| Error::Linalg("singular Cholesky factor".into()))
    }

    /// `u -> theta`.
    pub fn from_standard_normal(&self, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.dim());
        let d = self.dim();
        let mut theta = Vec::with_capacity(d);
        for i in 0..d {
            let row = self.cholesky.row(i);
            let z: f64 = (0..=i).map(|j| row[j] * u[j]).sum();
            theta.push(self.marginals[i].from_z(z));
        }
        theta
    }

    /// Draws `n` prior samples, returned row-major (`n * dim` values).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        let mut u = vec![0.0; d];
        for _ in 0..n {
            for v in u.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            out.extend(self.from_standard_normal(&u));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let d = self.dim();
        let repr = PriorModelRepr {
            marginals: self.marginals.clone(),
            correlation: (0..d)
                .map(|i| (0..d).map(|j| self.correlation[(i, j)]).collect())
                .collect(),
        };
        serde_json::to_value(repr).expect("prior serializes")
    }
}

/// Standard-normal log-density in `d = u.len()` dimensions.
pub fn log_prior_density_u(u: &[f64]) -> f64 {
    let sq: f64 = u.iter().map(|x| x * x).sum();
    -(u.len() as f64) * LN_SQRT_2PI - 0.5 * sq
}
