use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use seqbayes::harness::{run_experiment, run_sweep, summarize_dirs, write_outputs, ExperimentConfig};
use seqbayes::models::corrosion::{generate_corrosion_truth, CorrosionDataset, CorrosionModel};
use seqbayes::models::crack::{
    crack_error, crack_prior, generate_crack_dataset, rejection_sample_posterior, CrackDataset,
    DEFAULT_REJECTION_BUDGET, DELTA_N, PARAM_NAMES, STEPS, THETA_STAR,
};
use seqbayes::models::kalman::{kalman_reference, write_posteriors};
use seqbayes::output::{csv_writer, fmt_sci, write_json};
use seqbayes::{Error, Result};

#[derive(Parser)]
#[command(name = "seqbayes", version, about = "Sequential Bayesian parameter estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its JSON sidecar.
    TruthGen {
        #[command(subcommand)]
        case: TruthCase,
    },
    /// Compute a reference posterior.
    Reference {
        #[command(subcommand)]
        kind: ReferenceKind,
    },
    /// Run one experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run a corrosion config over m in {25, 50, 100} and n_l in {2, 4, 10}.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Summarize the trace.csv of one or more output directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Written to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TruthCase {
    Crack {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = STEPS)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Corrosion {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReferenceKind {
    /// Independent posterior draws given the first `k` crack measurements.
    Rejection {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_REJECTION_BUDGET)]
        max_proposals: u64,
        /// CSV of draws; a JSON summary is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact Gaussian posteriors of the corrosion fields, one per year.
    Kalman {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        sensors: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct RejectionSummary {
    k: usize,
    n_samples: usize,
    seed: u64,
    proposals: u64,
    acceptance_rate: f64,
    params: Vec<String>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Degeneracy { .. } | Error::Infeasible(_) => 3,
        Error::Reference(_) => 4,
        _ => 1,
    }
}

fn parent_dirs(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn truth_gen(case: TruthCase) -> Result<()> {
    match case {
        TruthCase::Crack { seed, steps, out } => {
            if steps == 0 {
                return Err(Error::Config("steps must be positive".into()));
            }
            let ds = generate_crack_dataset(&THETA_STAR, crack_error(), steps, DELTA_N, seed)?;
            parent_dirs(&out)?;
            ds.write(&out)
        }
        TruthCase::Corrosion { seed, out } => {
            let ds = generate_corrosion_truth(seed).map_err(|e| Error::Reference(e.to_string()))?;
            parent_dirs(&out)?;
            ds.write(&out)
        }
    }
}

fn reference(kind: ReferenceKind) -> Result<()> {
    match kind {
        ReferenceKind::Rejection { data, k, samples, seed, max_proposals, out } => {
            let ds = CrackDataset::read(&data).map_err(|e| Error::Config(e.to_string()))?;
            if k == 0 || k > ds.len() {
                return Err(Error::Config(format!("k must lie in 1..={}", ds.len())));
            }
            let rs = rejection_sample_posterior(&ds, k, samples, &crack_prior(), seed, max_proposals)
                .map_err(|e| match e {
                    Error::Infeasible(_) => e,
                    other => Error::Reference(other.to_string()),
                })?;
            parent_dirs(&out)?;
            let mut w = csv_writer(&out)?;
            w.write_record(PARAM_NAMES)?;
            for row in rs.samples.chunks_exact(rs.dim) {
                w.write_record(row.iter().map(|v| fmt_sci(*v)))?;
            }
            w.flush()?;
            let summary = RejectionSummary {
                k,
                n_samples: samples,
                seed,
                proposals: rs.proposals,
                acceptance_rate: rs.acceptance_rate,
                params: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
                mean: rs.mean(),
                std: rs.std(),
            };
            write_json(&out.with_extension("json"), &summary)
        }
        ReferenceKind::Kalman { data, m, sensors, out } => {
            let ds = CorrosionDataset::read(&data).map_err(|e| Error::Config(e.to_string()))?;
            let model = CorrosionModel::new(m, sensors).map_err(|e| Error::Config(e.to_string()))?;
            let posteriors = kalman_reference(&ds, &model.geometry, &model.layout)?;
            parent_dirs(&out)?;
            write_posteriors(&out, &posteriors)
        }
    }
}

fn run(config: PathBuf, output_dir: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(&config)?;
    if output_dir.is_some() {
        cfg.output_dir = output_dir;
    }
    let dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory given".into()))?;
    let res = run_experiment(cfg)?;
    write_outputs(&res, &dir)?;
    let failed = res.report.failed_runs.len();
    eprintln!(
        "{} {}: {} runs ({failed} failed), mean cost {}",
        res.report.case,
        res.report.filter.name(),
        res.report.repetitions,
        fmt_sci(res.report.cost.mean)
    );
    Ok(())
}

fn sweep(config: PathBuf, output_dir: PathBuf) -> Result<()> {
    let template = load_config(&config)?;
    let results = run_sweep(&template, &output_dir)?;
    let mut first_error = None;
    for (entry, err) in results {
        match err {
            None => eprintln!("m={} n_l={}: ok", entry.m, entry.n_sensors),
            Some(e) => {
                eprintln!("m={} n_l={}: {e}", entry.m, entry.n_sensors);
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn report(dirs: Vec<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let refs: Vec<&Path> = dirs.iter().map(PathBuf::as_path).collect();
    let summary = summarize_dirs(&refs)?;
    match out {
        Some(p) => {
            parent_dirs(&p)?;
            write_json(&p, &summary)
        }
        None => {
            print!("{}", seqbayes::output::to_json_string(&summary)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TruthGen { case } => truth_gen(case),
        Command::Reference { kind } => reference(kind),
        Command::Run { config, output_dir } => run(config, output_dir),
        Command::Sweep { config, output_dir } => sweep(config, output_dir),
        Command::Report { dirs, out } => report(dirs, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
