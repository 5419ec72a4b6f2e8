use std::fs;

use seqbayes::harness::{
    read_trace, run_experiment, run_sweep, summarize_dirs, write_outputs, CaseConfig, ExperimentConfig,
    ReferenceConfig,
};
use seqbayes::output::read_json;
use seqbayes::{FilterConfig, FilterKind};

fn crack_config(filter: FilterKind, n: usize, steps: usize, reps: usize) -> ExperimentConfig {
    ExperimentConfig {
        case: CaseConfig::Crack { steps, dataset: None, data_seed: 1 },
        filter,
        filter_config: FilterConfig::new(n, 0),
        repetitions: reps,
        reference: ReferenceConfig::Rejection {
            k_max: steps.min(3),
            n_samples: 400,
            max_proposals: 1 << 30,
            seed: 9,
            beyond: None,
        },
        output_dir: None,
        base_seed: 100,
        seed_offsets: Vec::new(),
        smc_steps: Vec::new(),
    }
}

fn corrosion_config(filter: FilterKind, m: usize, n_sensors: usize, years: usize) -> ExperimentConfig {
    ExperimentConfig {
        case: CaseConfig::Corrosion { m, n_sensors, years, dataset: None, data_seed: 2 },
        filter,
        filter_config: FilterConfig::new(300, 0),
        repetitions: 2,
        reference: ReferenceConfig::Kalman,
        output_dir: None,
        base_seed: 5,
        seed_offsets: Vec::new(),
        smc_steps: Vec::new(),
    }
}

#[test]
fn pfgm_cost_table_is_exact() {
    let mut cfg = crack_config(FilterKind::Pfgm, 5000, 100, 3);
    cfg.reference = ReferenceConfig::None;
    let res = run_experiment(cfg).unwrap();
    assert_eq!(res.report.cost.per_run, vec![500_000; 3]);
    assert_eq!(res.report.cost.mean, 500_000.0);
    assert!(res.trace.is_empty());
}

#[test]
fn cost_mean_is_total_over_runs() {
    let res = run_experiment(crack_config(FilterKind::Ibis, 300, 6, 4)).unwrap();
    let c = &res.report.cost;
    assert_eq!(c.total, c.per_run.iter().sum::<u64>());
    assert_eq!(c.mean, c.total as f64 / c.runs as f64);
    assert_eq!(c.runs, 4);
}

#[test]
fn outputs_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let res = run_experiment(crack_config(FilterKind::Pfgm, 300, 5, 3)).unwrap();
        write_outputs(&res, d).unwrap();
    }
    for f in ["trace.csv", "report.json", "config.json"] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
    let header = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert!(header.starts_with("step,metric,mean,lo,hi\n"));
    let echoed: ExperimentConfig = read_json(&a.join("config.json")).unwrap();
    assert_eq!(echoed.clone().resolve().unwrap(), echoed);
}

#[test]
fn trace_rows_and_bands() {
    let res = run_experiment(crack_config(FilterKind::Pf, 500, 5, 5)).unwrap();
    // Reference up to k_max = 3, four per-parameter metrics twice plus two norms.
    let steps: Vec<usize> = res.trace.iter().map(|r| r.step).collect();
    assert_eq!(steps.iter().max(), Some(&3));
    assert_eq!(res.trace.len(), 3 * (2 + 8));
    for r in &res.trace {
        assert!(r.band.lo <= r.band.mean && r.band.mean <= r.band.hi, "{r:?}");
        assert!(r.band.lo >= 0.0);
    }
    assert_eq!(res.report.final_step, Some(3));
    assert!(res.report.final_errors.contains_key("mean_l2"));
}

#[test]
fn single_repetition_bands_collapse() {
    let res = run_experiment(crack_config(FilterKind::Pf, 300, 3, 1)).unwrap();
    for r in &res.trace {
        assert_eq!(r.band.lo, r.band.mean);
        assert_eq!(r.band.hi, r.band.mean);
    }
}

#[test]
fn smc_reruns_interpolate_between_steps() {
    let mut cfg = crack_config(FilterKind::Smc, 300, 4, 2);
    cfg.reference = ReferenceConfig::Rejection { k_max: 4, n_samples: 300, max_proposals: 1 << 30, seed: 1, beyond: None };
    cfg.smc_steps = vec![1, 4];
    let res = run_experiment(cfg).unwrap();
    assert_eq!(res.report.interpolated_steps, vec![2, 3]);
    let run = res.successful().next().unwrap();
    let (e1, e2, e4) = (&run.errors[0], &run.errors[1], &run.errors[3]);
    assert_eq!((e1.step, e2.step, e4.step), (1, 2, 4));
    let expect = e1.mean_norm + (e4.mean_norm - e1.mean_norm) / 3.0;
    assert!((e2.mean_norm - expect).abs() < 1e-12);
    // The final posterior cost is that of the last re-run alone.
    let s = &run.report.steps;
    let last = s[2].evaluations - s[1].evaluations;
    assert!(res.report.cost.final_posterior_mean.unwrap() > 0.0);
    assert!(last < run.report.total_evaluations);
}

#[test]
fn smc_reference_beyond_k_max_is_labeled() {
    let mut cfg = crack_config(FilterKind::Pf, 300, 5, 1);
    cfg.reference = ReferenceConfig::Rejection {
        k_max: 2,
        n_samples: 300,
        max_proposals: 1 << 30,
        seed: 1,
        beyond: Some(seqbayes::harness::SmcReferenceConfig { n_particles: 500, steps: vec![5], seed: 3 }),
    };
    let res = run_experiment(cfg).unwrap();
    assert_eq!(res.report.reference.steps.get(&1).map(String::as_str), Some("rejection"));
    assert_eq!(res.report.reference.steps.get(&5).map(String::as_str), Some("smc"));
    assert!(!res.report.reference.steps.contains_key(&3));
}

#[test]
fn corrosion_trace_includes_correlation_norm() {
    let res = run_experiment(corrosion_config(FilterKind::Tpfgm, 5, 2, 4)).unwrap();
    assert!(res.trace.iter().any(|r| r.metric == "corr_l2"));
    assert!(res.trace.iter().any(|r| r.metric == "mean_rel:ln_a[0]"));
    assert_eq!(res.report.final_step, Some(4));
    for l in &res.report.q_ladders {
        assert!(l.ladder.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*l.ladder.last().unwrap(), 1.0);
    }
    assert_eq!(res.report.diverged_mass.max, 0.0);
}

#[test]
fn config_errors_surface() {
    let mut cfg = corrosion_config(FilterKind::Pf, 5, 2, 4);
    cfg.reference = ReferenceConfig::Rejection { k_max: 1, n_samples: 10, max_proposals: 10, seed: 0, beyond: None };
    assert!(matches!(run_experiment(cfg), Err(seqbayes::Error::Config(_))));
}

#[test]
fn infeasible_reference_is_reported() {
    let mut cfg = crack_config(FilterKind::Pf, 100, 3, 1);
    cfg.reference = ReferenceConfig::Rejection { k_max: 3, n_samples: 100_000, max_proposals: 1, seed: 0, beyond: None };
    assert!(matches!(run_experiment(cfg), Err(seqbayes::Error::Infeasible(_))));
}

#[test]
fn sweep_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut template = corrosion_config(FilterKind::Pf, 25, 2, 2);
    template.filter_config = FilterConfig::new(60, 0);
    template.repetitions = 1;
    let out = run_sweep(&template, dir.path()).unwrap();
    assert_eq!(out.len(), 9);
    assert!(out.iter().all(|(e, err)| err.is_none() && e.error.is_none()), "{out:?}");
    assert!(dir.path().join("sweep.json").exists());

    let d = dir.path().join("m100_nl10");
    let trace = read_trace(&d.join("trace.csv")).unwrap();
    assert!(trace.iter().any(|r| r.metric == "mean_rel:b[99]"));
    let summary = summarize_dirs(&[d.as_path()]).unwrap();
    assert_eq!(summary[0].final_step, Some(2));
    assert_eq!(summary[0].cost_mean, Some(120.0));
    assert!(summary[0].final_metrics.contains_key("corr_l2"));
}
