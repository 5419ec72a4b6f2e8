use crate::error::{Error, Result};

/// Numerically stable `ln(sum(exp(x)))`. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn uniform_log_weights(n: usize) -> Vec<f64> {
    vec![-(n as f64).ln(); n]
}

/// Shift log-weights so their exponentials sum to one.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Domain("log-weights contain NaN or +inf".into()));
    }
    let lse = log_sum_exp(log_weights);
    if lse == f64::NEG_INFINITY {
        return Err(Error::Degeneracy { step: 0 });
    }
    Ok(log_weights.iter().map(|v| v - lse).collect())
}

/// Effective sample size `1 / sum(w^2)` of normalized log-weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let lse = log_sum_exp(log_weights);
    if !(lse.abs() < 1e-9) {
        return Err(Error::Contract(format!(
            "ess expects normalized weights, log-sum is {lse}"
        )));
    }
    let doubled: Vec<f64> = log_weights.iter().map(|v| 2.0 * v).collect();
    let ess = (-log_sum_exp(&doubled)).exp();
    Ok(ess.clamp(1.0, log_weights.len() as f64))
}
