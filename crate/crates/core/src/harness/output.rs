use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentReport, ExperimentResult};
use crate::error::{Error, Result};
use crate::metrics::Band;
use crate::output::{csv_writer, fmt_sci, parse_float, read_json, write_json};

/// One aggregated metric at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub metric: String,
    pub band: Band,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    step: usize,
    metric: String,
    mean: String,
    lo: String,
    hi: String,
}

/// Writes `config.json` (resolved), `trace.csv` and `report.json`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), &result.config)?;
    let mut w = csv_writer(&dir.join("trace.csv"))?;
    if result.trace.is_empty() {
        w.write_record(["step", "metric", "mean", "lo", "hi"])?;
    }
    for row in &result.trace {
        w.serialize(CsvRow {
            step: row.step,
            metric: row.metric.clone(),
            mean: fmt_sci(row.band.mean),
            lo: fmt_sci(row.band.lo),
            hi: fmt_sci(row.band.hi),
        })?;
    }
    w.flush()?;
    write_json(&dir.join("report.json"), &result.report)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            let num = |s: &str| parse_float(s).ok_or_else(|| Error::Domain(format!("bad number '{s}' in {path:?}")));
            Ok(TraceRow {
                step: row.step,
                metric: row.metric,
                band: Band { mean: num(&row.mean)?, lo: num(&row.lo)?, hi: num(&row.hi)? },
            })
        })
        .collect()
}

/// Final-step metrics and mean cost of one output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirSummary {
    pub directory: String,
    pub case: Option<String>,
    pub filter: Option<String>,
    pub cost_mean: Option<f64>,
    pub final_step: Option<usize>,
    pub final_metrics: BTreeMap<String, Band>,
    /// Per metric, the mean band value averaged over all steps.
    pub step_average: BTreeMap<String, f64>,
}

/// Reads `trace.csv` (and `report.json` when present) from each directory.
pub fn summarize_dirs(dirs: &[&Path]) -> Result<Vec<DirSummary>> {
    dirs.iter()
        .map(|dir| {
            let trace = read_trace(&dir.join("trace.csv"))?;
            let report_path = dir.join("report.json");
            let report: Option<ExperimentReport> =
                if report_path.exists() { Some(read_json(&report_path)?) } else { None };
            let final_step = trace.iter().map(|r| r.step).max();
            let final_metrics = trace
                .iter()
                .filter(|r| Some(r.step) == final_step)
                .map(|r| (r.metric.clone(), r.band))
                .collect();
            let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for r in &trace {
                let e = sums.entry(r.metric.clone()).or_default();
                e.0 += r.band.mean;
                e.1 += 1;
            }
            Ok(DirSummary {
                directory: dir.display().to_string(),
                case: report.as_ref().map(|r| r.case.clone()),
                filter: report.as_ref().map(|r| r.filter.name().to_string()),
                cost_mean: report.as_ref().map(|r| r.cost.mean),
                final_step,
                final_metrics,
                step_average: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
            })
        })
        .collect()
}
