use serde::{Deserialize, Serialize};

use super::normal::{std_normal_cdf, std_normal_inv_cdf, std_normal_sf, LN_SQRT_2PI};
use crate::error::{Error, Result};

/// Probabilities handed to the inverse normal CDF are kept inside this band.
const PROB_CLAMP: f64 = 1e-15;

/// Log-scale parameters of a multiplicative lognormal error `exp(eps)`,
/// `eps ~ N(mu_log, sigma_log^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementError {
    pub mu_log: f64,
    pub sigma_log: f64,
}

impl MeasurementError {
    pub fn new(mu_log: f64, sigma_log: f64) -> Result<Self> {
        if !(sigma_log > 0.0) || !mu_log.is_finite() || !sigma_log.is_finite() {
            return Err(Error::Domain(format!(
                "measurement error needs finite mu and sigma > 0, got ({mu_log}, {sigma_log})"
            )));
        }
        Ok(Self { mu_log, sigma_log })
    }

    /// Builds the error from the mean and standard deviation of `exp(eps)`.
    pub fn from_moments(mean: f64, std: f64) -> Result<Self> {
        lognormal_params_from_moments(mean, std)
    }

    /// Gaussian log-density of a log-scale residual `ln y - ln(model)`.
    pub fn log_density(&self, log_residual: f64) -> f64 {
        let z = (log_residual - self.mu_log) / self.sigma_log;
        self.max_log_density() - 0.5 * z * z
    }

    /// Supremum of [`Self::log_density`], `-ln(sigma sqrt(2 pi))`.
    pub fn max_log_density(&self) -> f64 {
        -self.sigma_log.ln() - LN_SQRT_2PI
    }
}

/// Converts the mean/std of a lognormal variable into its log-scale parameters.
pub fn lognormal_params_from_moments(mean: f64, std: f64) -> Result<MeasurementError> {
    if !(mean > 0.0) || !(std > 0.0) {
        return Err(Error::Domain(format!(
            "lognormal moments must be positive, got mean {mean}, std {std}"
        )));
    }
    let cv = std / mean;
    let sigma_log = (cv * cv).ln_1p().sqrt();
    let mu_log = mean.ln() - 0.5 * sigma_log * sigma_log;
    MeasurementError::new(mu_log, sigma_log)
}

/// Marginal distribution of one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: f64, std: f64 },
    /// Mean and standard deviation of the variable itself (not of its log).
    Lognormal { mean: f64, std: f64 },
    Exponential { mean: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Marginal::Normal { mean, std } => mean.is_finite() && std > 0.0 && std.is_finite(),
            Marginal::Lognormal { mean, std } => mean > 0.0 && std > 0.0,
            Marginal::Exponential { mean } => mean > 0.0 && mean.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid marginal {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Normal { mean, .. }
            | Marginal::Lognormal { mean, .. }
            | Marginal::Exponential { mean } => mean,
        }
    }

    pub fn std(&self) -> f64 {
        match *self {
            Marginal::Normal { std, .. } | Marginal::Lognormal { std, .. } => std,
            Marginal::Exponential { mean } => mean,
        }
    }

    /// Maps `x` to the standard-normal quantile `Phi^-1(F(x))`.
    pub fn to_z(&self, x: f64) -> Result<f64> {
        match *self {
            Marginal::Normal { mean, std } => {
                if !x.is_finite() {
                    return Err(Error::Domain(format!("non-finite value {x}")));
                }
                Ok((x - mean) / std)
            }
            Marginal::Lognormal { mean, std } => {
                if !(x > 0.0) || !x.is_finite() {
                    return Err(Error::Domain(format!("lognormal value {x} outside support")));
                }
                let p = lognormal_params_from_moments(mean, std)?;
                Ok((x.ln() - p.mu_log) / p.sigma_log)
            }
            Marginal::Exponential { mean } => {
                if !(x > 0.0) || !x.is_finite() {
                    return Err(Error::Domain(format!(
                        "exponential value {x} outside support"
                    )));
                }
                let scaled = x / mean;
                // Work with whichever tail is small to keep precision.
                if scaled < std::f64::consts::LN_2 {
                    let cdf = (-(-scaled).exp_m1()).max(PROB_CLAMP);
                    Ok(std_normal_inv_cdf(cdf))
                } else {
                    let sf = (-scaled).exp().max(PROB_CLAMP);
                    Ok(-std_normal_inv_cdf(sf))
                }
            }
        }
    }

    /// Inverse of [`Self::to_z`].
    pub fn from_z(&self, z: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, std } => mean + std * z,
            Marginal::Lognormal { mean, std } => {
                let p = lognormal_params_from_moments(mean, std)
                    .expect("validated lognormal marginal");
                (p.mu_log + p.sigma_log * z).exp()
            }
            Marginal::Exponential { mean } => {
                if z <= 0.0 {
                    let cdf = std_normal_cdf(z).clamp(PROB_CLAMP, 0.5);
                    -mean * (-cdf).ln_1p()
                } else {
                    let sf = std_normal_sf(z).max(PROB_CLAMP);
                    -mean * sf.ln()
                }
            }
        }
    }
}
