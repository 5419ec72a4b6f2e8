//! Error metrics against reference posteriors and repetition bands.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{DeteriorationModel, StepRecord};
use crate::prob::{weighted_quantile, WeightedEnsemble};

/// `|reference - estimate| / |reference|`.
pub fn relative_error(reference: f64, estimate: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(Error::UndefinedReference("reference value is zero".into()));
    }
    Ok((reference - estimate).abs() / reference.abs())
}

/// `sqrt(sum (r_i - e_i)^2 / sum r_i^2)`.
pub fn l2_rel_error_norm(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Domain("vectors differ in length".into()));
    }
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        return Err(Error::UndefinedReference("reference vector is zero".into()));
    }
    let num: f64 = reference.iter().zip(estimate).map(|(r, e)| (r - e).powi(2)).sum();
    Ok((num / den).sqrt())
}

/// Strict lower triangle, row by row.
fn lower_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.nrows().saturating_sub(1) / 2);
    for i in 1..m.nrows() {
        for j in 0..i {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// L2 relative error norm over the off-diagonal correlation coefficients.
pub fn correlation_error_norm(reference: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<f64> {
    if reference.shape() != estimate.shape() || !reference.is_square() {
        return Err(Error::Domain("correlation matrices differ in shape".into()));
    }
    l2_rel_error_norm(&lower_triangle(reference), &lower_triangle(estimate))
}

/// Reference posterior moments at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMoments {
    pub step: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub correlation: Option<DMatrix<f64>>,
}

/// Errors of one filter step against its reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepErrors {
    pub step: usize,
    pub mean_rel: Vec<f64>,
    pub std_rel: Vec<f64>,
    pub mean_norm: f64,
    pub std_norm: f64,
    pub corr_norm: Option<f64>,
}

impl StepErrors {
    /// Metric names and values in a fixed order.
    pub fn named(&self, params: &[String]) -> Vec<(String, f64)> {
        let mut out = vec![
            ("mean_l2".to_string(), self.mean_norm),
            ("std_l2".to_string(), self.std_norm),
        ];
        if let Some(c) = self.corr_norm {
            out.push(("corr_l2".to_string(), c));
        }
        for (name, v) in params.iter().zip(&self.mean_rel) {
            out.push((format!("mean_rel:{name}"), *v));
        }
        for (name, v) in params.iter().zip(&self.std_rel) {
            out.push((format!("std_rel:{name}"), *v));
        }
        out
    }

    /// Linear interpolation between two steps' errors.
    pub fn lerp(a: &StepErrors, b: &StepErrors, step: usize) -> StepErrors {
        let t = (step - a.step) as f64 / (b.step - a.step) as f64;
        let mix = |x: f64, y: f64| x + t * (y - x);
        let mix_vec = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| mix(*p, *q)).collect();
        StepErrors {
            step,
            mean_rel: mix_vec(&a.mean_rel, &b.mean_rel),
            std_rel: mix_vec(&a.std_rel, &b.std_rel),
            mean_norm: mix(a.mean_norm, b.mean_norm),
            std_norm: mix(a.std_norm, b.std_norm),
            corr_norm: a.corr_norm.zip(b.corr_norm).map(|(p, q)| mix(p, q)),
        }
    }
}

/// Compares a filter's step summary with the reference moments.
pub fn step_errors(reference: &ReferenceMoments, record: &StepRecord) -> Result<StepErrors> {
    let per = |r: &[f64], e: &[f64]| -> Result<Vec<f64>> {
        if r.len() != e.len() {
            return Err(Error::Domain("reference and estimate differ in dimension".into()));
        }
        r.iter().zip(e).map(|(a, b)| relative_error(*a, *b)).collect()
    };
    let corr_norm = match (&reference.correlation, &record.correlation) {
        (Some(r), Some(e)) => Some(correlation_error_norm(r, e)?),
        _ => None,
    };
    Ok(StepErrors {
        step: record.step,
        mean_rel: per(&reference.mean, &record.mean)?,
        std_rel: per(&reference.std, &record.std)?,
        mean_norm: l2_rel_error_norm(&reference.mean, &record.mean)?,
        std_norm: l2_rel_error_norm(&reference.std, &record.std)?,
        corr_norm,
    })
}

/// Mean over repetitions with empirical 5% and 95% quantiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    /// The quantiles are widened to the mean where sampling skew would put
    /// the mean outside them.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("no values to aggregate".into()));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let lw = vec![-(values.len() as f64).ln(); values.len()];
        let lo = weighted_quantile(values, &lw, 0.05);
        let hi = weighted_quantile(values, &lw, 0.95);
        Ok(Self {
            mean,
            lo: lo.min(mean),
            hi: hi.max(mean),
        })
    }
}

/// Weighted state summary at one time after mapping particles through the
/// model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub time: f64,
    pub mean: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
    /// Posterior mass of particles whose model state diverged.
    pub diverged_mass: f64,
    pub warning: bool,
}

/// Pushes every particle through the model at each time. Diverged particles
/// are dropped and the remaining weights renormalized.
pub fn pushforward_state<M: DeteriorationModel>(
    ensemble: &WeightedEnsemble,
    model: &M,
    times: &[f64],
) -> Result<Vec<StateSummary>> {
    let lw = ensemble.log_weights();
    times
        .iter()
        .map(|&t| {
            let mut states: Vec<Vec<f64>> = Vec::new();
            let mut kept_lw = Vec::new();
            let mut diverged = 0.0;
            for (p, &w) in ensemble.iter().zip(lw) {
                match model.predict(p, t) {
                    Some(s) if s.iter().all(|v| v.is_finite()) => {
                        states.push(s);
                        kept_lw.push(w);
                    }
                    _ => diverged += w.exp(),
                }
            }
            if states.is_empty() {
                return Ok(StateSummary {
                    time: t,
                    mean: Vec::new(),
                    q05: Vec::new(),
                    q95: Vec::new(),
                    diverged_mass: 1.0,
                    warning: true,
                });
            }
            let shift = crate::prob::log_sum_exp(&kept_lw);
            kept_lw.iter_mut().for_each(|v| *v -= shift);
            let dim = states[0].len();
            let mut mean = vec![0.0; dim];
            for (s, w) in states.iter().zip(&kept_lw) {
                for (m, v) in mean.iter_mut().zip(s) {
                    *m += w.exp() * v;
                }
            }
            let column = |j: usize| -> Vec<f64> { states.iter().map(|s| s[j]).collect() };
            let q05 = (0..dim).map(|j| weighted_quantile(&column(j), &kept_lw, 0.05)).collect();
            let q95 = (0..dim).map(|j| weighted_quantile(&column(j), &kept_lw, 0.95)).collect();
            let diverged_mass = diverged.min(1.0);
            Ok(StateSummary {
                time: t,
                mean,
                q05,
                q95,
                diverged_mass,
                warning: diverged_mass > 0.5,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::crack::{crack_length, CrackModel, THETA_STAR};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(relative_error(2.0, 1.0).unwrap(), 0.5);
        assert!((relative_error(-33.5, -33.0).unwrap() - 0.5 / 33.5).abs() < 1e-15);
        assert!((relative_error(-33.5, -33.0).unwrap() - 0.014925).abs() < 1e-6);
        assert!(matches!(relative_error(0.0, 1.0), Err(Error::UndefinedReference(_))));
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_rel_error_norm(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert_eq!(l2_rel_error_norm(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(l2_rel_error_norm(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(l2_rel_error_norm(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn correlation_examples() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, -0.9, -0.9, 1.0]);
        let e = DMatrix::from_row_slice(2, 2, &[1.0, -0.45, -0.45, 1.0]);
        assert!((correlation_error_norm(&r, &e).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(correlation_error_norm(&r, &r).unwrap(), 0.0);
        let id = DMatrix::<f64>::identity(3, 3);
        let mut est = id.clone();
        est[(1, 0)] = 0.3;
        est[(0, 1)] = 0.3;
        assert!(matches!(correlation_error_norm(&id, &est), Err(Error::UndefinedReference(_))));
    }

    #[test]
    fn single_repetition_band_collapses() {
        let b = Band::from_values(&[0.25]).unwrap();
        assert_eq!((b.lo, b.mean, b.hi), (0.25, 0.25, 0.25));
    }

    proptest! {
        #[test]
        fn l2_single_component_is_relative_error(r in -1e3f64..1e3, e in -1e3f64..1e3) {
            prop_assume!(r.abs() > 1e-6);
            let a = l2_rel_error_norm(&[r], &[e]).unwrap();
            let b = relative_error(r, e).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }

        #[test]
        fn band_contains_mean(values in proptest::collection::vec(-1e3f64..1e3, 1..60)) {
            let b = Band::from_values(&values).unwrap();
            prop_assert!(b.lo <= b.mean && b.mean <= b.hi);
        }

        #[test]
        fn norms_are_nonnegative(
            pairs in proptest::collection::vec((0.1f64..10.0, -10.0f64..10.0), 1..20)
        ) {
            let (r, e): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(l2_rel_error_norm(&r, &e).unwrap() >= 0.0);
        }
    }

    #[test]
    fn pushforward_point_mass_follows_truth() {
        let model = CrackModel::standard();
        let n = 8;
        let particles: Vec<f64> = (0..n).flat_map(|_| THETA_STAR).collect();
        let ens = WeightedEnsemble::new(4, particles).unwrap();
        let times = [0.0, 1e6, 5e6, 1e7];
        for s in pushforward_state(&ens, &model, &times).unwrap() {
            let a = crack_length(s.time, &THETA_STAR).unwrap();
            assert!((s.mean[0] - a).abs() <= 1e-12 * a);
            assert_eq!(s.q05[0], s.q95[0]);
            assert_eq!(s.diverged_mass, 0.0);
        }
    }

    #[test]
    fn pushforward_prior_at_zero_is_initial_length() {
        let model = CrackModel::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ens = WeightedEnsemble::from_prior(&model.prior, 20_000, &mut rng).unwrap();
        let s = &pushforward_state(&ens, &model, &[0.0]).unwrap()[0];
        // Exponential with mean 1: standard error 1/sqrt(N).
        assert!((s.mean[0] - 1.0).abs() < 4.0 / (20_000f64).sqrt());
        assert!((s.q05[0] - (-(0.95f64).ln())).abs() < 0.01);
        assert!((s.q95[0] - (-(0.05f64).ln())).abs() < 0.1);
    }

    #[test]
    fn pushforward_bands_widen_with_cycles() {
        let model = CrackModel::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ens = WeightedEnsemble::from_prior(&model.prior, 5000, &mut rng).unwrap();
        let times: Vec<f64> = (0..=5).map(|k| k as f64 * 1e6).collect();
        let out = pushforward_state(&ens, &model, &times).unwrap();
        for w in out.windows(2) {
            assert!(w[1].q95[0] - w[1].q05[0] >= w[0].q95[0] - w[0].q05[0]);
        }
    }

    #[test]
    fn pushforward_flags_diverged_mass() {
        let model = CrackModel::standard();
        // m = 4 with a huge rate diverges long before 1e7 cycles.
        let bad = [2.0, 200.0, -20.0, 4.0];
        let mut particles = Vec::new();
        for _ in 0..3 {
            particles.extend_from_slice(&bad);
        }
        particles.extend_from_slice(&THETA_STAR);
        let ens = WeightedEnsemble::new(4, particles).unwrap();
        let s = &pushforward_state(&ens, &model, &[1e7]).unwrap()[0];
        assert!((s.diverged_mass - 0.75).abs() < 1e-12);
        assert!(s.warning);
        let a = crack_length(1e7, &THETA_STAR).unwrap();
        assert!((s.mean[0] - a).abs() <= 1e-12 * a);
    }

    #[test]
    fn lerp_midpoint() {
        let a = StepErrors {
            step: 10,
            mean_rel: vec![0.2],
            std_rel: vec![0.4],
            mean_norm: 0.2,
            std_norm: 0.4,
            corr_norm: Some(1.0),
        };
        let b = StepErrors {
            step: 20,
            mean_rel: vec![0.1],
            std_rel: vec![0.2],
            mean_norm: 0.1,
            std_norm: 0.2,
            corr_norm: Some(0.0),
        };
        let m = StepErrors::lerp(&a, &b, 15);
        assert!((m.mean_norm - 0.15).abs() < 1e-15);
        assert!((m.std_rel[0] - 0.3).abs() < 1e-15);
        assert_eq!(m.corr_norm, Some(0.5));
    }
}
