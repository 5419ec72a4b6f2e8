use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DeteriorationModel, FilterConfig, FilterKind, FilterReport, MeasurementSeries, StepRecord};
use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use super::imh::imh_gm_move;
use crate::prob::{multinomial_indices, WeightedEnsemble};

/// Per-step bookkeeping collected by a filter before summarizing.
#[derive(Debug, Default)]
pub(crate) struct StepStats {
    pub ess: f64,
    pub resample_events: usize,
    pub ladder: Vec<f64>,
    pub ladder_ess: Vec<f64>,
    pub acceptance_rates: Vec<f64>,
    pub gmm_fallbacks: usize,
}

/// State shared by every filter run: data, RNG stream, counters, records.
pub(crate) struct RunContext<'a, M: DeteriorationModel> {
    pub model: &'a M,
    pub data: &'a MeasurementSeries<M::Observation>,
    pub config: &'a FilterConfig,
    pub rng: ChaCha8Rng,
    start_evaluations: u64,
    em_fits: usize,
    em_non_monotone: usize,
    steps: Vec<StepRecord>,
}

impl<'a, M: DeteriorationModel> RunContext<'a, M> {
    pub fn new(
        model: &'a M,
        data: &'a MeasurementSeries<M::Observation>,
        config: &'a FilterConfig,
    ) -> Result<Self> {
        config.validate()?;
        if data.times.len() != data.observations.len() {
            return Err(Error::Domain("malformed measurement series".into()));
        }
        Ok(Self {
            model,
            data,
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            start_evaluations: model.counter().get(),
            em_fits: 0,
            em_non_monotone: 0,
            steps: Vec::new(),
        })
    }

    pub fn threshold(&self) -> f64 {
        self.config.threshold()
    }

    pub fn evaluations(&self) -> u64 {
        self.model.counter().get() - self.start_evaluations
    }

    pub fn prior_ensemble(&mut self) -> Result<WeightedEnsemble> {
        WeightedEnsemble::from_prior(self.model.prior(), self.config.n_particles, &mut self.rng)
    }

    /// Log-likelihood of measurement `idx` (0-based) for every particle.
    pub fn step_log_likelihoods(&self, ens: &WeightedEnsemble, idx: usize) -> Vec<f64> {
        let t = self.data.times[idx];
        let y = &self.data.observations[idx];
        ens.iter().map(|p| self.model.log_likelihood(p, t, y)).collect()
    }

    /// Weighted EM fit in standard-normal space.
    pub fn fit_mixture(&mut self, ens: &WeightedEnsemble) -> Result<GaussianMixture> {
        let prior = self.model.prior();
        let d = ens.dim();
        let mut u = DMatrix::zeros(d, ens.len());
        for (i, p) in ens.iter().enumerate() {
            let ui = prior.to_standard_normal(p)?;
            u.set_column(i, &ui);
        }

        let fit = GaussianMixture::fit_em(&u, ens.log_weights(), self.config.n_gm, &mut self.rng)?;

        self.em_fits += 1;
        if !fit.diagnostics.monotone {
            self.em_non_monotone += 1;
        }
        Ok(fit.mixture)
    }

    /// A fresh uniformly weighted ensemble drawn from the mixture.
    pub fn draw_from(&mut self, gmm: &GaussianMixture) -> Result<WeightedEnsemble> {
        let prior = self.model.prior();
        let u = gmm.sample(self.config.n_particles, &mut self.rng);
        let mut particles = Vec::with_capacity(u.len());
        for col in u.column_iter() {
            particles.extend(prior.from_standard_normal(col.as_slice()));
        }
        WeightedEnsemble::new(prior.dim(), particles)
    }

    /// Fits the mixture on the weighted set, resamples with replacement
    /// (cached log-likelihoods and payloads follow their particles) and moves
    /// with the IMH-GM kernel against `target`. A failed fit degrades to plain
    /// resampling.
    pub fn resample_move<P, F>(
        &mut self,
        ens: &mut WeightedEnsemble,
        payloads: &mut Vec<P>,
        stats: &mut StepStats,
        target: F,
    ) -> Result<()>
    where
        P: Clone,
        F: FnMut(&[f64]) -> (f64, P),
    {
        let gmm = self.fit_mixture(ens);
        let idx = multinomial_indices(ens.log_weights(), ens.len(), &mut self.rng)?;
        *ens = ens.select(&idx);
        *payloads = idx.iter().map(|&i| payloads[i].clone()).collect();
        stats.resample_events += 1;
        match gmm {
            Ok(gmm) => {
                let moved = imh_gm_move(
                    ens,
                    payloads,
                    self.model.prior(),
                    &gmm,
                    self.config.burn_in,
                    &mut self.rng,
                    target,
                )?;
                stats.acceptance_rates.push(moved.acceptance_rate());
            }
            Err(_) => stats.gmm_fallbacks += 1,
        }
        Ok(())
    }

    pub fn record(&mut self, step: usize, ens: &WeightedEnsemble, stats: StepStats) {
        let time = if step == 0 { 0.0 } else { self.data.times[step - 1] };
        let d = ens.dim();
        let mut q05 = Vec::with_capacity(d);
        let mut q95 = Vec::with_capacity(d);
        for j in 0..d {
            q05.push(ens.weighted_quantile(j, 0.05));
            q95.push(ens.weighted_quantile(j, 0.95));
        }
        self.steps.push(StepRecord {
            step,
            time,
            mean: ens.weighted_mean(),
            std: ens.weighted_std(),
            q05,
            q95,
            correlation: self.config.track_correlation.then(|| ens.weighted_correlation()),
            ess: stats.ess,
            resample_events: stats.resample_events,
            ladder: stats.ladder,
            ladder_ess: stats.ladder_ess,
            acceptance_rates: stats.acceptance_rates,
            gmm_fallbacks: stats.gmm_fallbacks,
            evaluations: self.evaluations(),
        });
    }

    pub fn record_prior(&mut self, ens: &WeightedEnsemble) {
        let n = ens.len() as f64;
        self.record(
            0,
            ens,
            StepStats {
                ess: n,
                ..Default::default()
            },
        );
    }

    pub fn finish(self, kind: FilterKind, ens: WeightedEnsemble) -> FilterReport {
        let total = self.evaluations();
        FilterReport {
            kind,
            config: self.config.clone(),
            threshold: self.config.threshold(),
            steps: self.steps,
            em_fits: self.em_fits,
            em_non_monotone: self.em_non_monotone,
            total_evaluations: total,
            final_ensemble: ens,
        }
    }
}

/// Maps a normalization failure of step `step` to a degeneracy error.
pub(crate) fn degenerate_at(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Degeneracy { .. } => Error::Degeneracy { step },
        other => other,
    }
}
