use crate::error::{Error, Result};
use crate::prob::log_sum_exp;

const MAX_BISECTIONS: usize = 100;
const ROOT_TOLERANCE: f64 = 1e-8;

/// `log_weights + power * log_liks`, where a zero likelihood stays at zero
/// weight for every power (the `power -> 0+` limit).
pub fn tempered_log_weights(log_weights: &[f64], log_liks: &[f64], power: f64) -> Vec<f64> {
    log_weights
        .iter()
        .zip(log_liks)
        .map(|(&lw, &ll)| {
            if ll == f64::NEG_INFINITY || lw == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lw + power * ll
            }
        })
        .collect()
}

/// ESS of the normalized weights `w * L^power`; zero when every weight
/// vanishes.
pub fn tempered_ess(log_weights: &[f64], log_liks: &[f64], power: f64) -> f64 {
    let a = tempered_log_weights(log_weights, log_liks, power);
    let lse = log_sum_exp(&a);
    if lse == f64::NEG_INFINITY {
        return 0.0;
    }
    let doubled: Vec<f64> = a.iter().map(|v| 2.0 * (v - lse)).collect();
    (-log_sum_exp(&doubled)).exp()
}

/// Finds the tempering increment `dq` in `(0, 1 - q]` at which the ESS of
/// `w_aux * L^dq` equals `n_t`, by bisection.
///
/// The caller must have checked that the ESS at the full remaining power
/// `1 - q` is below `n_t`; the ESS at `dq -> 0+` must exceed it.
pub fn solve_temper_increment(
    log_liks: &[f64],
    log_weights_aux: &[f64],
    q: f64,
    n_t: f64,
) -> Result<f64> {
    let n = log_liks.len() as f64;
    let hi_bound = 1.0 - q;
    if !(hi_bound > 0.0) {
        return Err(Error::Contract(format!("tempering exponent {q} already complete")));
    }
    let f = |dq: f64| tempered_ess(log_weights_aux, log_liks, dq) - n_t;
    let f_lo = f(0.0);
    let f_hi = f(hi_bound);
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::Contract(format!(
            "tempering root not bracketed: ESS(0+) - N_T = {f_lo}, ESS(1-q) - N_T = {f_hi}"
        )));
    }
    let tol = ROOT_TOLERANCE * n;
    let (mut lo, mut hi) = (0.0, hi_bound);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= tol && mid > 0.0 {
            return Ok(mid);
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Stay on the side where the ESS is not below the threshold.
    Ok(if lo > 0.0 { lo } else { hi })
}

/// Upper bound on tempering rungs within one step before giving up.
pub(crate) const MAX_RUNGS: usize = 1000;

/// Next move along a tempering ladder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Rung {
    /// The remaining power can be absorbed without dropping below `N_T`.
    Absorb,
    /// Advance the exponent by the given increment.
    Partial(f64),
    /// Zero-likelihood particles alone push the ESS below `N_T`: replenish
    /// the population at the current exponent.
    Rescue,
}

pub(crate) fn next_rung(
    log_weights: &[f64],
    log_liks: &[f64],
    q: f64,
    n_t: f64,
    step: usize,
) -> Result<Rung> {
    let ess_zero = tempered_ess(log_weights, log_liks, 0.0);
    if ess_zero == 0.0 {
        return Err(Error::Degeneracy { step });
    }
    if tempered_ess(log_weights, log_liks, 1.0 - q) >= n_t {
        return Ok(Rung::Absorb);
    }
    if ess_zero <= n_t {
        return Ok(Rung::Rescue);
    }
    solve_temper_increment(log_liks, log_weights, q, n_t).map(Rung::Partial)
}

/// Log-likelihood tempered by `power`; zero likelihood stays zero.
pub(crate) fn tempered(log_lik: f64, power: f64) -> f64 {
    if log_lik == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        power * log_lik
    }
}
