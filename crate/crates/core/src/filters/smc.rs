use super::context::{degenerate_at, RunContext, StepStats};
use super::ibis::history_sum;
use super::tempering::{next_rung, tempered, tempered_log_weights, Rung, MAX_RUNGS};
use super::{DeteriorationModel, FilterConfig, FilterKind, FilterReport, MeasurementSeries};
use crate::error::{Error, Result};
use crate::prob::uniform_log_weights;

/// Off-line tempered SMC sampler targeting the posterior given all of
/// `data`. The report holds the prior record and one record for the final
/// posterior, whose ladder lists every exponent visited.
pub fn smc_run<M: DeteriorationModel>(
    model: &M,
    data: &MeasurementSeries<M::Observation>,
    config: &FilterConfig,
) -> Result<FilterReport> {
    let mut ctx = RunContext::new(model, data, config)?;
    let mut ens = ctx.prior_ensemble()?;
    ctx.record_prior(&ens);
    let n = data.len();
    if n == 0 {
        return Ok(ctx.finish(FilterKind::Smc, ens));
    }
    let n_t = ctx.threshold();
    let mut full: Vec<f64> = ens.iter().map(|p| history_sum(model, data, p, n)).collect();
    let mut stats = StepStats {
        ess: super::tempered_ess(ens.log_weights(), &full, 1.0),
        ..Default::default()
    };
    let uniform = uniform_log_weights(ens.len());
    let mut q = 0.0;
    for _ in 0..MAX_RUNGS {
        let dq = match next_rung(&uniform, &full, q, n_t, n)? {
            Rung::Absorb => 1.0 - q,
            Rung::Partial(dq) => dq,
            Rung::Rescue => 0.0,
        };
        let lw = tempered_log_weights(&uniform, &full, dq);
        ens.set_log_weights(&lw).map_err(degenerate_at(n))?;
        if dq > 0.0 {
            q = if dq == 1.0 - q { 1.0 } else { q + dq };
            stats.ladder.push(q);
            stats.ladder_ess.push(ens.ess());
        }
        ens.cached_log_likelihoods = Some(full.iter().map(|&l| tempered(l, q)).collect());
        let power = q;
        ctx.resample_move(&mut ens, &mut full, &mut stats, |theta| {
            let l = history_sum(model, data, theta, n);
            (tempered(l, power), l)
        })?;
        if q >= 1.0 {
            ctx.record(n, &ens, stats);
            return Ok(ctx.finish(FilterKind::Smc, ens));
        }
    }
    Err(Error::Degeneracy { step: n })
}

/// Re-runs [`smc_run`] from scratch on `y_{1:k}` for every `k` in `steps`,
/// seeding run `k` with `config.seed + k`. Evaluation counts in the records
/// are cumulative over the re-runs.
pub fn smc_rerun<M: DeteriorationModel>(
    model: &M,
    data: &MeasurementSeries<M::Observation>,
    config: &FilterConfig,
    steps: &[usize],
) -> Result<FilterReport> {
    config.validate()?;
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("SMC re-run steps must be increasing".into()));
    }
    if let Some(&k) = steps.iter().find(|&&k| k == 0 || k > data.len()) {
        return Err(Error::Config(format!("SMC re-run step {k} outside 1..={}", data.len())));
    }
    let mut records = Vec::with_capacity(steps.len() + 1);
    let mut total = 0;
    let (mut em_fits, mut em_non_monotone) = (0, 0);
    let mut last = None;
    for &k in steps {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(k as u64);
        let report = smc_run(model, &data.truncated(k), &cfg)?;
        if records.is_empty() {
            records.push(report.steps[0].clone());
        }
        let mut rec = report.last().clone();
        rec.evaluations += total;
        total += report.total_evaluations;
        em_fits += report.em_fits;
        em_non_monotone += report.em_non_monotone;
        records.push(rec);
        last = Some(report.final_ensemble);
    }
    let final_ensemble = match last {
        Some(e) => e,
        None => return Err(Error::Config("no SMC re-run steps given".into())),
    };
    Ok(FilterReport {
        kind: FilterKind::Smc,
        config: config.clone(),
        threshold: config.threshold(),
        steps: records,
        em_fits,
        em_non_monotone,
        total_evaluations: total,
        final_ensemble,
    })
}
