use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::prob::{log_prior_density_u, PriorModel, WeightedEnsemble};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposals: usize,
    pub accepted: usize,
}

impl MoveStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Independent Metropolis-Hastings move with a Gaussian mixture proposal in
/// the standard-normal space of `prior`.
///
/// Each particle receives `n_burn + 1` proposals. `ensemble` must carry the
/// target log-likelihood of every particle in `cached_log_likelihoods`;
/// `target` returns the log-likelihood of a candidate together with a payload
/// that replaces `payloads[i]` on acceptance.
pub fn imh_gm_move<P, F, R>(
    ensemble: &mut WeightedEnsemble,
    payloads: &mut [P],
    prior: &PriorModel,
    gmm: &GaussianMixture,
    n_burn: usize,
    rng: &mut R,
    mut target: F,
) -> Result<MoveStats>
where
    F: FnMut(&[f64]) -> (f64, P),
    R: Rng + ?Sized,
{
    let n = ensemble.len();
    let d = ensemble.dim();
    if payloads.len() != n {
        return Err(Error::Contract("one payload per particle required".into()));
    }
    if gmm.dim() != d {
        return Err(Error::Contract("mixture and ensemble dimensions differ".into()));
    }
    let mut ll = ensemble
        .cached_log_likelihoods
        .take()
        .ok_or_else(|| Error::Contract("IMH move needs cached log-likelihoods".into()))?;

    let mut u = DMatrix::zeros(d, n);
    for (i, p) in ensemble.iter().enumerate() {
        u.set_column(i, &prior.to_standard_normal(p)?);
    }
    let log_g = gmm.log_density_columns(&u);
    // Importance log-ratio of the current state: log-lik + log prior - log proposal.
    let mut ratio: Vec<f64> = (0..n)
        .map(|i| log_prior_density_u(u.column(i).as_slice()) - log_g[i])
        .collect();

    let mut stats = MoveStats::default();
    for _ in 0..=n_burn {
        let cand = gmm.sample(n, rng);
        let cand_log_g = gmm.log_density_columns(&cand);
        for i in 0..n {
            let uc = cand.column(i);
            let theta_c = prior.from_standard_normal(uc.as_slice());
            let (ll_c, payload) = target(&theta_c);
            let ratio_c = log_prior_density_u(uc.as_slice()) - cand_log_g[i];
            let log_alpha = if ll_c == f64::NEG_INFINITY || ll_c.is_nan() {
                f64::NEG_INFINITY
            } else if ll[i] == f64::NEG_INFINITY {
                f64::INFINITY
            } else {
                (ll_c + ratio_c) - (ll[i] + ratio[i])
            };
            let uniform: f64 = rng.random();
            stats.proposals += 1;
            if uniform.ln() < log_alpha {
                stats.accepted += 1;
                ensemble.particle_mut(i).copy_from_slice(&theta_c);
                ll[i] = ll_c;
                ratio[i] = ratio_c;
                payloads[i] = payload;
            }
        }
    }
    ensemble.cached_log_likelihoods = Some(ll);
    Ok(stats)
}
