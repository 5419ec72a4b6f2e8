use super::context::{degenerate_at, RunContext, StepStats};
use super::tempering::{next_rung, tempered_ess, tempered_log_weights, Rung, MAX_RUNGS};
use super::{DeteriorationModel, FilterConfig, FilterKind, FilterReport, MeasurementSeries};
use crate::error::{Error, Result};
use crate::prob::WeightedEnsemble;

#[derive(Clone, Copy, PartialEq)]
enum Renewal {
    Multinomial,
    Mixture,
    TemperedMixture,
}

/// Bootstrap particle filter with multinomial resampling.
pub fn pf_run<M: DeteriorationModel>(
    model: &M,
    data: &MeasurementSeries<M::Observation>,
    config: &FilterConfig,
) -> Result<FilterReport> {
    run(model, data, config, Renewal::Multinomial, FilterKind::Pf)
}

/// Particle filter that renews degenerate ensembles by sampling a Gaussian
/// mixture fitted to the weighted particles. With `config.tempering` set this
/// is [`tpfgm_run`].
pub fn pfgm_run<M: DeteriorationModel>(
    model: &M,
    data: &MeasurementSeries<M::Observation>,
    config: &FilterConfig,
) -> Result<FilterReport> {
    if config.tempering {
        return tpfgm_run(model, data, config);
    }
    run(model, data, config, Renewal::Mixture, FilterKind::Pfgm)
}

/// PFGM with adaptive tempering of each degenerating measurement.
pub fn tpfgm_run<M: DeteriorationModel>(
    model: &M,
    data: &MeasurementSeries<M::Observation>,
    config: &FilterConfig,
) -> Result<FilterReport> {
    run(model, data, config, Renewal::TemperedMixture, FilterKind::Tpfgm)
}

fn run<M: DeteriorationModel>(
    model: &M,
    data: &MeasurementSeries<M::Observation>,
    config: &FilterConfig,
    renewal: Renewal,
    kind: FilterKind,
) -> Result<FilterReport> {
    let mut ctx = RunContext::new(model, data, config)?;
    let mut ens = ctx.prior_ensemble()?;
    ctx.record_prior(&ens);
    for idx in 0..data.len() {
        let step = idx + 1;
        let stats = if renewal == Renewal::TemperedMixture {
            tempered_step(&mut ctx, &mut ens, idx)?
        } else {
            plain_step(&mut ctx, &mut ens, idx, renewal)?
        };
        ctx.record(step, &ens, stats);
    }
    Ok(ctx.finish(kind, ens))
}

fn plain_step<M: DeteriorationModel>(
    ctx: &mut RunContext<'_, M>,
    ens: &mut WeightedEnsemble,
    idx: usize,
    renewal: Renewal,
) -> Result<StepStats> {
    let step = idx + 1;
    let ll = ctx.step_log_likelihoods(ens, idx);
    let lw = tempered_log_weights(ens.log_weights(), &ll, 1.0);
    ens.set_log_weights(&lw).map_err(degenerate_at(step))?;
    let mut stats = StepStats {
        ess: ens.ess(),
        ladder: vec![1.0],
        ..Default::default()
    };
    stats.ladder_ess.push(stats.ess);
    if stats.ess < ctx.threshold() {
        stats.resample_events = 1;
        *ens = match renewal {
            Renewal::Multinomial => ens.resample_multinomial(&mut ctx.rng)?,
            _ => renew_from_mixture(ctx, ens, &mut stats)?,
        };
    }
    Ok(stats)
}

fn tempered_step<M: DeteriorationModel>(
    ctx: &mut RunContext<'_, M>,
    ens: &mut WeightedEnsemble,
    idx: usize,
) -> Result<StepStats> {
    let step = idx + 1;
    let n_t = ctx.threshold();
    let mut ll = ctx.step_log_likelihoods(ens, idx);
    let mut stats = StepStats {
        ess: tempered_ess(ens.log_weights(), &ll, 1.0),
        ..Default::default()
    };
    let mut q = 0.0;
    for _ in 0..MAX_RUNGS {
        let (dq, rescue) = match next_rung(ens.log_weights(), &ll, q, n_t, step)? {
            Rung::Absorb => (1.0 - q, false),
            Rung::Partial(dq) => (dq, false),
            Rung::Rescue => (0.0, true),
        };
        let lw = tempered_log_weights(ens.log_weights(), &ll, dq);
        ens.set_log_weights(&lw).map_err(degenerate_at(step))?;
        if !rescue {
            q = if dq == 1.0 - q { 1.0 } else { q + dq };
            stats.ladder.push(q);
            stats.ladder_ess.push(ens.ess());
        }
        if q >= 1.0 {
            return Ok(stats);
        }
        stats.resample_events += 1;
        *ens = renew_from_mixture(ctx, ens, &mut stats)?;
        ll = ctx.step_log_likelihoods(ens, idx);
    }
    Err(Error::Degeneracy { step })
}

fn renew_from_mixture<M: DeteriorationModel>(
    ctx: &mut RunContext<'_, M>,
    ens: &WeightedEnsemble,
    stats: &mut StepStats,
) -> Result<WeightedEnsemble> {
    match ctx.fit_mixture(ens) {
        Ok(gmm) => ctx.draw_from(&gmm),
        Err(_) => {
            stats.gmm_fallbacks += 1;
            ens.resample_multinomial(&mut ctx.rng)
        }
    }
}
