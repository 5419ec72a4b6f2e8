use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{FilterConfig, FilterKind};
use crate::models::crack::{DEFAULT_REJECTION_BUDGET, STEPS};
use crate::models::corrosion::YEARS;

fn default_crack_steps() -> usize {
    STEPS
}

fn default_years() -> usize {
    YEARS
}

fn default_data_seed() -> u64 {
    1
}

fn default_k_max() -> usize {
    10
}

fn default_reference_samples() -> usize {
    10_000
}

fn default_budget() -> u64 {
    DEFAULT_REJECTION_BUDGET
}

fn default_repetitions() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CaseConfig {
    Crack {
        /// Measurements assimilated, taken from the start of the record.
        #[serde(default = "default_crack_steps")]
        steps: usize,
        /// Dataset CSV; generated from `data_seed` when absent.
        #[serde(default)]
        dataset: Option<PathBuf>,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
    Corrosion {
        m: usize,
        n_sensors: usize,
        #[serde(default = "default_years")]
        years: usize,
        #[serde(default)]
        dataset: Option<PathBuf>,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
}

impl CaseConfig {
    pub fn label(&self) -> String {
        match self {
            CaseConfig::Crack { .. } => "crack".into(),
            CaseConfig::Corrosion { m, n_sensors, .. } => format!("corrosion(m={m},n_l={n_sensors})"),
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            CaseConfig::Crack { steps, .. } => *steps,
            CaseConfig::Corrosion { years, .. } => *years,
        }
    }
}

/// Large-particle SMC runs standing in for rejection sampling at steps past
/// `k_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcReferenceConfig {
    pub n_particles: usize,
    pub steps: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ReferenceConfig {
    None,
    Rejection {
        #[serde(default = "default_k_max")]
        k_max: usize,
        #[serde(default = "default_reference_samples")]
        n_samples: usize,
        #[serde(default = "default_budget")]
        max_proposals: u64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        beyond: Option<SmcReferenceConfig>,
    },
    Kalman,
}

impl ReferenceConfig {
    pub fn label(&self) -> &'static str {
        match self {
            ReferenceConfig::None => "none",
            ReferenceConfig::Rejection { .. } => "rejection",
            ReferenceConfig::Kalman => "kalman",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseConfig,
    pub filter: FilterKind,
    /// Its `seed` is replaced per repetition.
    pub filter_config: FilterConfig,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub base_seed: u64,
    /// Repetition `r` uses seed `base_seed + seed_offsets[r]`; defaults to
    /// `0..repetitions`.
    #[serde(default)]
    pub seed_offsets: Vec<u64>,
    /// SMC only: re-run the sampler at these steps and interpolate the error
    /// trace in between. Empty means the final posterior alone.
    #[serde(default)]
    pub smc_steps: Vec<usize>,
}

impl ExperimentConfig {
    /// Fills every defaulted field and checks consistency.
    pub fn resolve(mut self) -> Result<Self> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        if self.seed_offsets.is_empty() {
            self.seed_offsets = (0..self.repetitions as u64).collect();
        }
        if self.seed_offsets.len() != self.repetitions {
            return Err(Error::Config(format!(
                "{} seed offsets for {} repetitions",
                self.seed_offsets.len(),
                self.repetitions
            )));
        }
        match (self.filter, self.filter_config.tempering) {
            (FilterKind::Pfgm, true) => self.filter = FilterKind::Tpfgm,
            (FilterKind::Ibis, true) => self.filter = FilterKind::Tibis,
            (FilterKind::Tpfgm | FilterKind::Tibis, _) => self.filter_config.tempering = true,
            _ => {}
        }
        self.filter_config.seed = self.base_seed;
        self.filter_config.validate()?;

        let steps = self.case.steps();
        match &self.case {
            CaseConfig::Crack { steps, .. } if !(1..=STEPS).contains(steps) => {
                return Err(Error::Config(format!("crack steps must lie in 1..={STEPS}")));
            }
            CaseConfig::Corrosion { m, n_sensors, years, .. } => {
                if *m == 0 {
                    return Err(Error::Config("m must be positive".into()));
                }
                if ![0, 2, 4, 10].contains(n_sensors) {
                    return Err(Error::Config("n_sensors must be 0, 2, 4 or 10".into()));
                }
                if !(1..=YEARS).contains(years) {
                    return Err(Error::Config(format!("years must lie in 1..={YEARS}")));
                }
            }
            _ => {}
        }
        match (&self.case, &self.reference) {
            (_, ReferenceConfig::None) => {}
            (CaseConfig::Crack { .. }, ReferenceConfig::Rejection { k_max, n_samples, beyond, .. }) => {
                if *k_max == 0 || *n_samples < 2 {
                    return Err(Error::Config("rejection reference needs k_max >= 1 and n_samples >= 2".into()));
                }
                if let Some(b) = beyond {
                    if b.steps.iter().any(|&s| s <= *k_max || s > steps) {
                        return Err(Error::Config("SMC reference steps must lie in (k_max, steps]".into()));
                    }
                }
            }
            (CaseConfig::Corrosion { .. }, ReferenceConfig::Kalman) => {}
            (case, reference) => {
                return Err(Error::Config(format!(
                    "reference '{}' does not apply to the {} case",
                    reference.label(),
                    case.label()
                )));
            }
        }
        if !self.smc_steps.is_empty() {
            if self.filter != FilterKind::Smc {
                return Err(Error::Config("smc_steps requires the smc filter".into()));
            }
            if self.smc_steps.windows(2).any(|w| w[0] >= w[1])
                || self.smc_steps.iter().any(|&s| s == 0 || s > steps)
            {
                return Err(Error::Config(format!("smc_steps must increase within 1..={steps}")));
            }
        }
        Ok(self)
    }

    pub fn seed(&self, repetition: usize) -> u64 {
        self.base_seed.wrapping_add(self.seed_offsets[repetition])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ExperimentConfig> {
        serde_json::from_str::<ExperimentConfig>(s)?.resolve()
    }

    #[test]
    fn minimal_config_resolves_defaults() {
        let cfg = parse(
            r#"{"case": {"kind": "crack"}, "filter": "pfgm",
                "filter_config": {"n_particles": 5000}, "reference": {"kind": "none"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.repetitions, 50);
        assert_eq!(cfg.seed_offsets, (0..50).collect::<Vec<u64>>());
        assert_eq!(cfg.case.steps(), 100);
        let again: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again.resolve().unwrap(), cfg);
    }

    #[test]
    fn tempering_flag_selects_variant() {
        let cfg = parse(
            r#"{"case": {"kind": "corrosion", "m": 25, "n_sensors": 2}, "filter": "pfgm",
                "filter_config": {"n_particles": 100, "tempering": true},
                "reference": {"kind": "kalman"}, "repetitions": 1}"#,
        )
        .unwrap();
        assert_eq!(cfg.filter, FilterKind::Tpfgm);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let bad = [
            r#"{"case": {"kind": "crack"}, "filter": "pf", "filter_config": {"n_particles": 10},
                "reference": {"kind": "kalman"}}"#,
            r#"{"case": {"kind": "crack"}, "filter": "pf", "filter_config": {"n_particles": 10},
                "reference": {"kind": "none"}, "smc_steps": [1, 2]}"#,
            r#"{"case": {"kind": "corrosion", "m": 25, "n_sensors": 3}, "filter": "pf",
                "filter_config": {"n_particles": 10}, "reference": {"kind": "none"}}"#,
            r#"{"case": {"kind": "crack"}, "filter": "pf", "filter_config": {"n_particles": 10},
                "reference": {"kind": "none"}, "repetitions": 2, "seed_offsets": [1]}"#,
            r#"{"case": {"kind": "crack"}, "filter": "pf", "filter_config": {"n_particles": 1},
                "reference": {"kind": "none"}}"#,
        ];
        for s in bad {
            assert!(matches!(parse(s), Err(Error::Config(_))), "{s}");
        }
        assert!(parse(r#"{"case": {"kind": "crack"}, "bogus": 1}"#).is_err());
    }
}
