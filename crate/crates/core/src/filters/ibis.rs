use super::context::{degenerate_at, RunContext, StepStats};
use super::tempering::{next_rung, tempered, tempered_ess, tempered_log_weights, Rung, MAX_RUNGS};
use super::{DeteriorationModel, FilterConfig, FilterKind, FilterReport, MeasurementSeries};
use crate::error::{Error, Result};
use crate::prob::WeightedEnsemble;

/// Iterated batch importance sampling with IMH-GM moves after each
/// resampling. With `config.tempering` set this is [`tibis_run`].
pub fn ibis_run<M: DeteriorationModel>(
    model: &M,
    data: &MeasurementSeries<M::Observation>,
    config: &FilterConfig,
) -> Result<FilterReport> {
    if config.tempering {
        return tibis_run(model, data, config);
    }
    let mut ctx = RunContext::new(model, data, config)?;
    let mut ens = ctx.prior_ensemble()?;
    ens.cached_log_likelihoods = Some(vec![0.0; ens.len()]);
    ctx.record_prior(&ens);
    for idx in 0..data.len() {
        let step = idx + 1;
        let ll = ctx.step_log_likelihoods(&ens, idx);
        accumulate(&mut ens, &ll, 1.0);
        let lw = tempered_log_weights(ens.log_weights(), &ll, 1.0);
        ens.set_log_weights(&lw).map_err(degenerate_at(step))?;
        let mut stats = StepStats {
            ess: ens.ess(),
            ladder: vec![1.0],
            ..Default::default()
        };
        stats.ladder_ess.push(stats.ess);
        if stats.ess < ctx.threshold() {
            let mut payloads = vec![(); ens.len()];
            ctx.resample_move(&mut ens, &mut payloads, &mut stats, |theta| {
                (history_sum(model, data, theta, step), ())
            })?;
        }
        ctx.record(step, &ens, stats);
    }
    Ok(ctx.finish(FilterKind::Ibis, ens))
}

/// IBIS in which a degenerating measurement is annealed in: intermediate
/// targets keep the past likelihood at full power and raise only the newest
/// one to `q`, with a mixture fit, resampling and move at every rung.
pub fn tibis_run<M: DeteriorationModel>(
    model: &M,
    data: &MeasurementSeries<M::Observation>,
    config: &FilterConfig,
) -> Result<FilterReport> {
    let mut ctx = RunContext::new(model, data, config)?;
    let mut ens = ctx.prior_ensemble()?;
    ens.cached_log_likelihoods = Some(vec![0.0; ens.len()]);
    ctx.record_prior(&ens);
    let n_t = ctx.threshold();
    for idx in 0..data.len() {
        let step = idx + 1;
        let mut past = ens.cached_log_likelihoods.take().expect("cache kept across steps");
        let mut current = ctx.step_log_likelihoods(&ens, idx);
        let mut stats = StepStats {
            ess: tempered_ess(ens.log_weights(), &current, 1.0),
            ..Default::default()
        };
        let mut q = 0.0;
        let mut rungs = 0;
        loop {
            rungs += 1;
            if rungs > MAX_RUNGS {
                return Err(Error::Degeneracy { step });
            }
            let (dq, rescue) = match next_rung(ens.log_weights(), &current, q, n_t, step)? {
                Rung::Absorb => (1.0 - q, false),
                Rung::Partial(dq) => (dq, false),
                Rung::Rescue => (0.0, true),
            };
            let lw = tempered_log_weights(ens.log_weights(), &current, dq);
            ens.set_log_weights(&lw).map_err(degenerate_at(step))?;
            if !rescue {
                q = if dq == 1.0 - q { 1.0 } else { q + dq };
                stats.ladder.push(q);
                stats.ladder_ess.push(ens.ess());
            }
            if q >= 1.0 {
                break;
            }
            ens.cached_log_likelihoods = Some(
                past.iter()
                    .zip(&current)
                    .map(|(&p, &c)| p + tempered(c, q))
                    .collect(),
            );
            let mut payloads: Vec<(f64, f64)> =
                past.iter().copied().zip(current.iter().copied()).collect();
            let power = q;
            ctx.resample_move(&mut ens, &mut payloads, &mut stats, |theta| {
                let p = history_sum(model, data, theta, idx);
                let c = model.log_likelihood(theta, data.times[idx], &data.observations[idx]);
                (p + tempered(c, power), (p, c))
            })?;
            (past, current) = payloads.into_iter().unzip();
        }
        ens.cached_log_likelihoods = Some(past.iter().zip(&current).map(|(p, c)| p + c).collect());
        ctx.record(step, &ens, stats);
    }
    Ok(ctx.finish(FilterKind::Tibis, ens))
}

/// Sum of the per-measurement log-likelihoods of `theta` over the first
/// `upto` measurements; one counted evaluation per measurement.
pub(crate) fn history_sum<M: DeteriorationModel>(
    model: &M,
    data: &MeasurementSeries<M::Observation>,
    theta: &[f64],
    upto: usize,
) -> f64 {
    (0..upto)
        .map(|j| model.log_likelihood(theta, data.times[j], &data.observations[j]))
        .sum()
}

fn accumulate(ens: &mut WeightedEnsemble, ll: &[f64], power: f64) {
    let cache = ens.cached_log_likelihoods.get_or_insert_with(|| vec![0.0; ll.len()]);
    for (c, &l) in cache.iter_mut().zip(ll) {
        *c += tempered(l, power);
    }
}
