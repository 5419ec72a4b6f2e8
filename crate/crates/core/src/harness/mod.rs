//! Repeated seeded experiments, error traces against reference posteriors,
//! and the files they produce.

mod config;
mod output;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{run_filter, smc_rerun, smc_run, DeteriorationModel, FilterConfig, FilterKind, FilterReport, MeasurementSeries};
use crate::metrics::{pushforward_state, step_errors, Band, ReferenceMoments, StateSummary, StepErrors};
use crate::models::corrosion::{CorrosionDataset, CorrosionModel};
use crate::models::crack::{
    crack_prior, generate_crack_dataset, rejection_sample_posterior, CrackDataset, CrackModel, DELTA_N,
    PARAM_NAMES, STEPS, THETA_STAR,
};
use crate::models::kalman::kalman_reference;

pub use config::{CaseConfig, ExperimentConfig, ReferenceConfig, SmcReferenceConfig};
pub use output::{read_trace, summarize_dirs, write_outputs, DirSummary, TraceRow};

/// A failed runs fraction above this fails the experiment.
pub const MAX_FAILED_FRACTION: f64 = 0.1;

/// Reference posterior moments keyed by step, with their provenance.
#[derive(Clone, Debug, Default)]
pub struct ReferenceSet {
    pub moments: BTreeMap<usize, ReferenceMoments>,
    /// `"rejection"`, `"kalman"` or `"smc"` per step.
    pub labels: BTreeMap<usize, String>,
    /// Rejection acceptance rates per step.
    pub acceptance_rates: BTreeMap<usize, f64>,
}

impl ReferenceSet {
    pub fn get(&self, step: usize) -> Option<&ReferenceMoments> {
        self.moments.get(&step)
    }
}

/// One successful repetition.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub report: FilterReport,
    /// Errors at every step with a reference, interpolated ones included.
    pub errors: Vec<StepErrors>,
    pub interpolated: Vec<usize>,
    /// Largest diverged posterior mass over the measurement times.
    pub diverged_mass: f64,
    pub final_state: Option<StateSummary>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub repetition: usize,
    pub seed: u64,
    pub result: Result<RunRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub per_run: Vec<u64>,
    pub total: u64,
    pub runs: usize,
    /// `total / runs`.
    pub mean: f64,
    /// SMC re-runs: mean cost of the final posterior alone.
    pub final_posterior_mean: Option<f64>,
    pub em_fits: usize,
    pub em_non_monotone: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub repetition: usize,
    pub step: usize,
    pub ladder: Vec<f64>,
    pub ess: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub per_run_mean: Vec<Option<f64>>,
    pub moves: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergedSummary {
    pub per_run: Vec<f64>,
    pub max: f64,
    pub warnings: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub repetition: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub kind: String,
    pub steps: BTreeMap<usize, String>,
    pub acceptance_rates: BTreeMap<usize, f64>,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub case: String,
    pub filter: FilterKind,
    pub repetitions: usize,
    pub seeds: Vec<u64>,
    pub failed_runs: Vec<FailedRun>,
    pub reference: ReferenceSummary,
    pub cost: CostTable,
    pub resample_events: Vec<usize>,
    pub q_ladders: Vec<LadderEntry>,
    pub acceptance_rates: AcceptanceSummary,
    pub diverged_mass: DivergedSummary,
    pub interpolated_steps: Vec<usize>,
    pub final_step: Option<usize>,
    pub final_errors: BTreeMap<String, Band>,
    pub final_states: Vec<Option<StateSummary>>,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub params: Vec<String>,
    pub reference: ReferenceSet,
    pub runs: Vec<RunOutcome>,
    pub trace: Vec<TraceRow>,
    pub report: ExperimentReport,
}

impl ExperimentResult {
    pub fn successful(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter_map(|r| r.result.as_ref().ok())
    }
}

/// Loaded or generated data for a case.
pub enum CaseData {
    Crack(CrackDataset),
    Corrosion(CorrosionDataset),
}

pub fn load_case_data(case: &CaseConfig) -> Result<CaseData> {
    Ok(match case {
        CaseConfig::Crack { dataset: Some(p), .. } => CaseData::Crack(CrackDataset::read(p)?),
        CaseConfig::Crack { data_seed, .. } => CaseData::Crack(generate_crack_dataset(
            &THETA_STAR,
            crate::models::crack::crack_error(),
            STEPS,
            DELTA_N,
            *data_seed,
        )?),
        CaseConfig::Corrosion { dataset: Some(p), .. } => CaseData::Corrosion(CorrosionDataset::read(p)?),
        CaseConfig::Corrosion { data_seed, .. } => {
            CaseData::Corrosion(crate::models::corrosion::generate_corrosion_truth(*data_seed)?)
        }
    })
}

fn correlation_of(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let s: Vec<f64> = cov.diagonal().iter().map(|v| v.sqrt()).collect();
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| {
        if i == j { 1.0 } else { cov[(i, j)] / (s[i] * s[j]) }
    })
}

/// Steps at which the filter produces a posterior summary.
fn filter_steps(cfg: &ExperimentConfig) -> Vec<usize> {
    let n = cfg.case.steps();
    match cfg.filter {
        FilterKind::Smc if cfg.smc_steps.is_empty() => vec![n],
        FilterKind::Smc => cfg.smc_steps.clone(),
        _ => (1..=n).collect(),
    }
}

/// Builds the reference moments needed by `cfg`'s error trace.
pub fn build_reference(cfg: &ExperimentConfig, data: &CaseData) -> Result<ReferenceSet> {
    let mut set = ReferenceSet::default();
    let wanted = filter_steps(cfg);
    match (&cfg.reference, data) {
        (ReferenceConfig::None, _) => {}
        (ReferenceConfig::Rejection { k_max, n_samples, max_proposals, seed, beyond }, CaseData::Crack(ds)) => {
            let prior = crack_prior();
            for &k in wanted.iter().filter(|&&k| k <= *k_max) {
                let rs = rejection_sample_posterior(ds, k, *n_samples, &prior, seed.wrapping_add(k as u64), *max_proposals)
                    .map_err(|e| match e {
                        Error::Infeasible(_) => e,
                        other => Error::Reference(other.to_string()),
                    })?;
                set.acceptance_rates.insert(k, rs.acceptance_rate);
                set.labels.insert(k, "rejection".into());
                set.moments.insert(k, ReferenceMoments { step: k, mean: rs.mean(), std: rs.std(), correlation: None });
            }
            if let Some(b) = beyond {
                let model = CrackModel::standard();
                let series = ds.series();
                for &k in b.steps.iter().filter(|k| wanted.contains(k)) {
                    let mut fc = FilterConfig::new(b.n_particles, b.seed.wrapping_add(k as u64));
                    fc.track_correlation = false;
                    let r = smc_run(&model, &series.truncated(k), &fc)
                        .map_err(|e| Error::Reference(format!("SMC reference at step {k}: {e}")))?;
                    let last = r.last();
                    set.labels.insert(k, "smc".into());
                    set.moments.insert(
                        k,
                        ReferenceMoments { step: k, mean: last.mean.clone(), std: last.std.clone(), correlation: None },
                    );
                }
            }
        }
        (ReferenceConfig::Kalman, CaseData::Corrosion(ds)) => {
            let CaseConfig::Corrosion { m, n_sensors, .. } = &cfg.case else {
                return Err(Error::Config("kalman reference needs the corrosion case".into()));
            };
            let model = CorrosionModel::new(*m, *n_sensors)?;
            let posteriors = kalman_reference(ds, &model.geometry, &model.layout)?;
            for &k in &wanted {
                let p = &posteriors[k - 1];
                set.labels.insert(k, "kalman".into());
                set.moments.insert(
                    k,
                    ReferenceMoments {
                        step: k,
                        mean: p.mean.iter().copied().collect(),
                        std: p.std(),
                        correlation: Some(correlation_of(&p.covariance)),
                    },
                );
            }
        }
        _ => return Err(Error::Config("reference does not match the case data".into())),
    }
    Ok(set)
}

/// Parameter names of the case, in vector order.
pub fn param_names(case: &CaseConfig) -> Vec<String> {
    match case {
        CaseConfig::Crack { .. } => PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        CaseConfig::Corrosion { m, .. } => (0..*m)
            .map(|i| format!("ln_a[{i}]"))
            .chain((0..*m).map(|i| format!("b[{i}]")))
            .collect(),
    }
}

fn single_run<M: DeteriorationModel>(
    cfg: &ExperimentConfig,
    model: &M,
    data: &MeasurementSeries<M::Observation>,
    reference: &ReferenceSet,
    seed: u64,
) -> Result<RunRecord> {
    let mut fc = cfg.filter_config.clone();
    fc.seed = seed;
    let report = if cfg.filter == FilterKind::Smc && !cfg.smc_steps.is_empty() {
        smc_rerun(model, data, &fc, &cfg.smc_steps)?
    } else {
        run_filter(cfg.filter, model, data, &fc)?
    };

    let mut anchors = Vec::new();
    for rec in report.steps.iter().skip(1) {
        if let Some(r) = reference.get(rec.step) {
            anchors.push(step_errors(r, rec)?);
        }
    }
    let mut errors = Vec::new();
    let mut interpolated = Vec::new();
    let rerun = cfg.filter == FilterKind::Smc && !cfg.smc_steps.is_empty();
    for (i, e) in anchors.iter().enumerate() {
        if rerun && i > 0 {
            let prev = &anchors[i - 1];
            for step in prev.step + 1..e.step {
                errors.push(StepErrors::lerp(prev, e, step));
                interpolated.push(step);
            }
        }
        errors.push(e.clone());
    }

    let states = pushforward_state(&report.final_ensemble, model, &data.times)?;
    let diverged_mass = states.iter().map(|s| s.diverged_mass).fold(0.0, f64::max);
    Ok(RunRecord {
        final_state: states.last().cloned(),
        report,
        errors,
        interpolated,
        diverged_mass,
    })
}

fn run_all<M, F>(
    cfg: &ExperimentConfig,
    make_model: F,
    data: &MeasurementSeries<M::Observation>,
    reference: &ReferenceSet,
) -> Vec<RunOutcome>
where
    M: DeteriorationModel,
    F: Fn() -> Result<M> + Sync,
{
    // Each repetition owns its model so evaluation counters stay separate.
    (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed(r);
            let result = make_model().and_then(|model| single_run(cfg, &model, data, reference, seed));
            RunOutcome { repetition: r, seed, result }
        })
        .collect()
}

/// Runs every repetition of `config`, computes error traces against the
/// configured reference and aggregates them. Writes nothing; see
/// [`write_outputs`].
pub fn run_experiment(config: ExperimentConfig) -> Result<ExperimentResult> {
    let cfg = config.resolve()?;
    let data = load_case_data(&cfg.case)?;
    let reference = build_reference(&cfg, &data)?;
    run_with_reference(cfg, &data, reference)
}

/// As [`run_experiment`] with data and reference supplied by the caller.
pub fn run_with_reference(cfg: ExperimentConfig, data: &CaseData, reference: ReferenceSet) -> Result<ExperimentResult> {
    let steps = cfg.case.steps();
    let runs = match (&cfg.case, data) {
        (CaseConfig::Crack { .. }, CaseData::Crack(ds)) => {
            if ds.len() < steps {
                return Err(Error::Config(format!("dataset holds {} of {steps} steps", ds.len())));
            }
            let series = ds.series().truncated(steps);
            run_all(&cfg, || Ok(CrackModel::new(crack_prior(), ds.error)), &series, &reference)
        }
        (CaseConfig::Corrosion { m, n_sensors, .. }, CaseData::Corrosion(ds)) => {
            let probe = CorrosionModel::new(*m, *n_sensors)?;
            let series = ds.series(&probe.layout)?.truncated(steps);
            if series.len() < steps {
                return Err(Error::Config(format!("dataset holds {} of {steps} years", series.len())));
            }
            let error = ds.error;
            let make = || {
                let mut model = CorrosionModel::new(*m, *n_sensors)?;
                model.error = error;
                Ok(model)
            };
            run_all(&cfg, make, &series, &reference)
        }
        _ => return Err(Error::Config("case data does not match the case".into())),
    };

    let failed = runs.iter().filter(|r| r.result.is_err()).count();
    if failed as f64 > MAX_FAILED_FRACTION * runs.len() as f64 {
        let first = runs.into_iter().find_map(|r| r.result.err()).expect("a run failed");
        return Err(first);
    }
    let params = param_names(&cfg.case);
    let trace = aggregate_trace(&runs, &params)?;
    let report = build_report(&cfg, &reference, &runs, &trace);
    Ok(ExperimentResult { config: cfg, params, reference, runs, trace, report })
}

fn aggregate_trace(runs: &[RunOutcome], params: &[String]) -> Result<Vec<TraceRow>> {
    let ok: Vec<&RunRecord> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    let Some(first) = ok.first() else {
        return Ok(Vec::new());
    };
    let mut rows = Vec::new();
    for (i, e) in first.errors.iter().enumerate() {
        let named: Vec<Vec<(String, f64)>> = ok.iter().map(|r| r.errors[i].named(params)).collect();
        for (j, (metric, _)) in named[0].iter().enumerate() {
            let values: Vec<f64> = named.iter().map(|n| n[j].1).collect();
            rows.push(TraceRow { step: e.step, metric: metric.clone(), band: Band::from_values(&values)? });
        }
    }
    Ok(rows)
}

fn build_report(
    cfg: &ExperimentConfig,
    reference: &ReferenceSet,
    runs: &[RunOutcome],
    trace: &[TraceRow],
) -> ExperimentReport {
    let ok: Vec<(usize, &RunRecord)> =
        runs.iter().filter_map(|r| r.result.as_ref().ok().map(|rec| (r.repetition, rec))).collect();
    let per_run: Vec<u64> = ok.iter().map(|(_, r)| r.report.total_evaluations).collect();
    let total: u64 = per_run.iter().sum();
    let final_posterior_mean = (cfg.filter == FilterKind::Smc && !cfg.smc_steps.is_empty() && !ok.is_empty())
        .then(|| {
            let sum: u64 = ok
                .iter()
                .map(|(_, r)| {
                    let s = &r.report.steps;
                    s[s.len() - 1].evaluations - if s.len() > 2 { s[s.len() - 2].evaluations } else { 0 }
                })
                .sum();
            sum as f64 / ok.len() as f64
        });
    let cost = CostTable {
        runs: per_run.len(),
        mean: if per_run.is_empty() { 0.0 } else { total as f64 / per_run.len() as f64 },
        total,
        per_run,
        final_posterior_mean,
        em_fits: ok.iter().map(|(_, r)| r.report.em_fits).sum(),
        em_non_monotone: ok.iter().map(|(_, r)| r.report.em_non_monotone).sum(),
    };

    let mut q_ladders = Vec::new();
    for (rep, r) in &ok {
        for s in &r.report.steps {
            if s.ladder.len() > 1 {
                q_ladders.push(LadderEntry { repetition: *rep, step: s.step, ladder: s.ladder.clone(), ess: s.ladder_ess.clone() });
            }
        }
    }

    let rates: Vec<Vec<f64>> = ok.iter().map(|(_, r)| r.report.acceptance_rates()).collect();
    let all: Vec<f64> = rates.iter().flatten().copied().collect();
    let acceptance_rates = AcceptanceSummary {
        per_run_mean: rates
            .iter()
            .map(|v| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64))
            .collect(),
        moves: all.len(),
        mean: (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64),
        min: all.iter().copied().reduce(f64::min),
        max: all.iter().copied().reduce(f64::max),
    };

    let dm: Vec<f64> = ok.iter().map(|(_, r)| r.diverged_mass).collect();
    let diverged_mass = DivergedSummary {
        max: dm.iter().copied().fold(0.0, f64::max),
        warnings: dm.iter().filter(|&&v| v > 0.5).count(),
        per_run: dm,
    };

    let final_step = trace.last().map(|r| r.step);
    let final_errors = trace
        .iter()
        .filter(|r| Some(r.step) == final_step)
        .map(|r| (r.metric.clone(), r.band))
        .collect();

    ExperimentReport {
        case: cfg.case.label(),
        filter: cfg.filter,
        repetitions: cfg.repetitions,
        seeds: (0..cfg.repetitions).map(|r| cfg.seed(r)).collect(),
        failed_runs: runs
            .iter()
            .filter_map(|r| {
                r.result.as_ref().err().map(|e| FailedRun { repetition: r.repetition, seed: r.seed, error: e.to_string() })
            })
            .collect(),
        reference: ReferenceSummary {
            kind: cfg.reference.label().into(),
            steps: reference.labels.clone(),
            acceptance_rates: reference.acceptance_rates.clone(),
        },
        cost,
        resample_events: ok.iter().map(|(_, r)| r.report.resample_events()).collect(),
        q_ladders,
        acceptance_rates,
        diverged_mass,
        interpolated_steps: ok.first().map(|(_, r)| r.interpolated.clone()).unwrap_or_default(),
        final_step,
        final_errors,
        final_states: ok.iter().map(|(_, r)| r.final_state.clone()).collect(),
    }
}

/// The corrosion grid: element counts crossed with sensor counts.
pub const SWEEP_ELEMENTS: [usize; 3] = [25, 50, 100];
pub const SWEEP_SENSORS: [usize; 3] = [2, 4, 10];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub m: usize,
    pub n_sensors: usize,
    pub directory: String,
    pub error: Option<String>,
    pub cost_mean: Option<f64>,
    pub final_errors: BTreeMap<String, Band>,
}

/// Runs `template` over the corrosion grid, writing each case to
/// `root/m{m}_nl{n}`. A failing case is recorded and the sweep continues.
pub fn run_sweep(template: &ExperimentConfig, root: &std::path::Path) -> Result<Vec<(SweepEntry, Option<Error>)>> {
    let (years, dataset, data_seed) = match &template.case {
        CaseConfig::Corrosion { years, dataset, data_seed, .. } => (*years, dataset.clone(), *data_seed),
        CaseConfig::Crack { .. } => return Err(Error::Config("the sweep runs the corrosion case".into())),
    };
    let mut out = Vec::new();
    for m in SWEEP_ELEMENTS {
        for n_sensors in SWEEP_SENSORS {
            let dir = root.join(format!("m{m}_nl{n_sensors}"));
            let mut cfg = template.clone();
            cfg.case = CaseConfig::Corrosion { m, n_sensors, years, dataset: dataset.clone(), data_seed };
            cfg.output_dir = Some(dir.clone());
            let result = run_experiment(cfg).and_then(|res| {
                write_outputs(&res, &dir)?;
                Ok(res)
            });
            let mut entry = SweepEntry {
                m,
                n_sensors,
                directory: dir.display().to_string(),
                error: None,
                cost_mean: None,
                final_errors: BTreeMap::new(),
            };
            match result {
                Ok(res) => {
                    entry.cost_mean = Some(res.report.cost.mean);
                    entry.final_errors = res.report.final_errors.clone();
                    out.push((entry, None));
                }
                Err(e) => {
                    entry.error = Some(e.to_string());
                    out.push((entry, Some(e)));
                }
            }
        }
    }
    let entries: Vec<&SweepEntry> = out.iter().map(|(e, _)| e).collect();
    std::fs::create_dir_all(root)?;
    crate::output::write_json(&root.join("sweep.json"), &entries)?;
    Ok(out)
}
