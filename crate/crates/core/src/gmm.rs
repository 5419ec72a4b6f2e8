//! Gaussian mixtures fitted by weighted expectation-maximization.
//!
//! Mixtures are fitted to weighted particle sets in standard-normal space and
//! serve both as a resampling distribution and as an independence proposal.
//! Samples are passed as `d x n` matrices, one sample per column.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::prob::{log_sum_exp, LN_SQRT_2PI};

pub const DEFAULT_COMPONENTS: usize = 8;
pub const DEFAULT_REGULARIZATION: f64 = 1e-6;
/// Samples lighter than this carry no mass in a fit.
const NEGLIGIBLE_LOG_WEIGHT: f64 = -690.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmOptions {
    pub max_iterations: usize,
    /// Stop once the relative change of the objective drops below this.
    pub tolerance: f64,
    /// Added to every covariance diagonal in each M-step.
    pub regularization: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            regularization: DEFAULT_REGULARIZATION,
        }
    }
}

#[derive(Clone, Debug)]
struct Component {
    log_weight: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
    chol_inv: DMatrix<f64>,
    /// Rows of `chol_inv`, lower triangle only.
    packed_inv: Vec<f64>,
    log_det: f64,
}

impl Component {
    fn new(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Option<Self> {
        let d = mean.len();
        let chol = covariance.clone().cholesky()?.l();
        let mut chol_inv = DMatrix::identity(d, d);
        if !chol.solve_lower_triangular_mut(&mut chol_inv) {
            return None;
        }
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() || chol_inv.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut packed_inv = Vec::with_capacity(d * (d + 1) / 2);
        for r in 0..d {
            for c in 0..=r {
                packed_inv.push(chol_inv[(r, c)]);
            }
        }
        Some(Self {
            log_weight: weight.ln(),
            mean,
            covariance,
            chol,
            chol_inv,
            packed_inv,
            log_det,
        })
    }

    fn log_norm_const(&self) -> f64 {
        -(self.mean.len() as f64) * LN_SQRT_2PI - 0.5 * self.log_det
    }

    /// `trace(Sigma^-1)`
    fn precision_trace(&self) -> f64 {
        self.chol_inv.norm_squared()
    }

    /// Squared Mahalanobis distances of every sample.
    fn mahalanobis(&self, x: &Coords) -> Vec<f64> {
        let centered: Vec<Vec<f64>> = x
            .rows
            .iter()
            .zip(self.mean.iter())
            .map(|(row, m)| row.iter().map(|v| v - m).collect())
            .collect();
        let mut total = vec![0.0; x.n];
        let mut y = vec![0.0; x.n];
        let mut start = 0;
        for r in 0..x.rows.len() {
            y.fill(0.0);
            for (l, xc) in self.packed_inv[start..start + r + 1].iter().zip(&centered) {
                for (yi, v) in y.iter_mut().zip(xc) {
                    *yi += l * v;
                }
            }
            for (t, yi) in total.iter_mut().zip(&y) {
                *t += yi * yi;
            }
            start += r + 1;
        }
        total
    }
}

/// Samples stored one coordinate per row, so inner loops run over samples.
struct Coords {
    rows: Vec<Vec<f64>>,
    n: usize,
}

impl Coords {
    fn new(x: &DMatrix<f64>) -> Self {
        Self {
            rows: x.row_iter().map(|r| r.iter().copied().collect()).collect(),
            n: x.ncols(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(p, q)| p * q).sum();
    for (p, q) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += p[j] * q[j];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Finite mixture of multivariate normals.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

/// Convergence record of one EM fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmDiagnostics {
    pub iterations: usize,
    /// Objective after initialization and after each M-step.
    pub objective_trace: Vec<f64>,
    /// No decrease beyond 1e-9 between consecutive iterations that kept all
    /// components.
    pub monotone: bool,
    pub dropped_components: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    pub diagnostics: EmDiagnostics,
}

impl GaussianMixture {
    /// Mixture from explicit parameters. Weights are normalized; every
    /// covariance must be positive definite.
    pub fn new(
        weights: &[f64],
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || means.len() != covariances.len() {
            return Err(Error::Domain("mixture parameter lengths disagree".into()));
        }
        let dim = means[0].len();
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) {
            return Err(Error::Domain("mixture weights must be non-negative".into()));
        }
        let mut components = Vec::with_capacity(weights.len());
        for ((w, m), c) in weights.iter().zip(means).zip(covariances) {
            if m.len() != dim || c.nrows() != dim || c.ncols() != dim {
                return Err(Error::Domain("mixture component dimension mismatch".into()));
            }
            let comp = Component::new(w / total, m, c)
                .ok_or_else(|| Error::Linalg("covariance is not positive definite".into()))?;
            components.push(comp);
        }
        Ok(Self { dim, components })
    }

    /// Like [`Self::new`] after adding `DEFAULT_REGULARIZATION` to each
    /// covariance diagonal.
    pub fn new_regularized(
        weights: &[f64],
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let covariances = covariances
            .into_iter()
            .map(|c| {
                let d = c.nrows();
                c + DMatrix::identity(d, d) * DEFAULT_REGULARIZATION
            })
            .collect();
        Self::new(weights, means, covariances)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.log_weight.exp()).collect()
    }

    pub fn means(&self) -> Vec<&DVector<f64>> {
        self.components.iter().map(|c| &c.mean).collect()
    }

    pub fn covariances(&self) -> Vec<&DMatrix<f64>> {
        self.components.iter().map(|c| &c.covariance).collect()
    }

    pub fn log_density(&self, u: &[f64]) -> f64 {
        assert_eq!(u.len(), self.dim, "point dimension mismatch");
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let diff = DVector::from_fn(self.dim, |i, _| u[i] - c.mean[i]);
                let y = &c.chol_inv * diff;
                c.log_weight + c.log_norm_const() - 0.5 * y.norm_squared()
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// Log-density of every column of a `d x n` matrix.
    pub fn log_density_columns(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let coords = Coords::new(x);
        let per_comp: Vec<Vec<f64>> = self
            .components
            .iter()
            .map(|c| {
                let base = c.log_weight + c.log_norm_const();
                c.mahalanobis(&coords).into_iter().map(|m| base - 0.5 * m).collect()
            })
            .collect();
        let mut terms = vec![0.0; per_comp.len()];
        (0..x.ncols())
            .map(|i| {
                for (t, pc) in terms.iter_mut().zip(&per_comp) {
                    *t = pc[i];
                }
                log_sum_exp(&terms)
            })
            .collect()
    }

    /// Draws `n` samples, returned as a `d x n` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let picker = WeightedIndex::new(self.weights()).expect("mixture weights are valid");
        let mut out = DMatrix::zeros(self.dim, n);
        let mut z = DVector::zeros(self.dim);
        for i in 0..n {
            let c = &self.components[picker.sample(rng)];
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let x = &c.mean + &c.chol * &z;
            out.set_column(i, &x);
        }
        out
    }

    /// Weighted EM fit with default options.
    pub fn fit_em<R: Rng + ?Sized>(
        samples: &DMatrix<f64>,
        log_weights: &[f64],
        k: usize,
        rng: &mut R,
    ) -> Result<EmFit> {
        Self::fit_em_with(samples, log_weights, k, rng, &EmOptions::default())
    }

    /// Weighted EM fit.
    ///
    /// Particle weights multiply the responsibilities in every sum. The
    /// objective is the weighted log-likelihood with each component density
    /// damped by `exp(-reg/2 * tr(Sigma^-1))`; the regularized M-step
    /// `Sigma = S + reg*I` maximizes exactly this objective, so it never
    /// decreases between iterations. Samples are put into a canonical order
    /// first, which makes the fit independent of the input ordering.
    pub fn fit_em_with<R: Rng + ?Sized>(
        samples: &DMatrix<f64>,
        log_weights: &[f64],
        k: usize,
        rng: &mut R,
        opts: &EmOptions,
    ) -> Result<EmFit> {
        let d = samples.nrows();
        let n_total = samples.ncols();
        if log_weights.len() != n_total {
            return Err(Error::Domain("sample and weight counts differ".into()));
        }
        if k == 0 || d == 0 {
            return Err(Error::Domain("need k >= 1 and d >= 1".into()));
        }
        if n_total < k * (d + 1) {
            return Err(Error::Contract(format!(
                "{n_total} samples cannot support {k} components in {d} dimensions"
            )));
        }
        let lse = log_sum_exp(log_weights);
        if !(lse.abs() < 1e-9) {
            return Err(Error::Contract("mixture weights must be normalized".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("samples must be finite".into()));
        }

        let mut keep: Vec<usize> = (0..n_total)
            .filter(|&i| log_weights[i] > NEGLIGIBLE_LOG_WEIGHT)
            .collect();
        keep.sort_by(|&a, &b| {
            for j in 0..d {
                let o = samples[(j, a)].total_cmp(&samples[(j, b)]);
                if o.is_ne() {
                    return o;
                }
            }
            log_weights[a].total_cmp(&log_weights[b])
        });
        let x = DMatrix::from_fn(d, keep.len(), |j, i| samples[(j, keep[i])]);
        let w: Vec<f64> = keep.iter().map(|&i| log_weights[i].exp()).collect();
        let collapse_mass = 1.0 / n_total as f64;

        let coords = Coords::new(&x);
        let mut comps = initialize(&x, &coords, &w, k, rng, opts.regularization)?;
        let (mut resp, mut objective) = e_step(&coords, &w, &comps, opts.regularization);
        let mut diag = EmDiagnostics {
            objective_trace: vec![objective],
            monotone: true,
            ..Default::default()
        };
        for _ in 0..opts.max_iterations {
            let (next, dropped) = m_step(&coords, &w, &resp, collapse_mass, opts.regularization)?;
            comps = next;
            diag.dropped_components += dropped;
            diag.iterations += 1;
            let (r, obj) = e_step(&coords, &w, &comps, opts.regularization);
            resp = r;
            diag.objective_trace.push(obj);
            if dropped == 0 && obj < objective - 1e-9 {
                diag.monotone = false;
            }
            let change = (obj - objective).abs();
            objective = obj;
            if dropped == 0 && change <= opts.tolerance * objective.abs().max(1e-12) {
                diag.converged = true;
                break;
            }
        }
        Ok(EmFit {
            mixture: GaussianMixture {
                dim: d,
                components: comps,
            },
            diagnostics: diag,
        })
    }
}

fn weighted_moments(x: &Coords, a: &[f64], reg: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = x.rows.len();
    let mass: f64 = a.iter().sum();
    let mean: Vec<f64> = x.rows.iter().map(|row| dot(row, a) / mass).collect();
    let centered: Vec<Vec<f64>> = x
        .rows
        .iter()
        .zip(&mean)
        .map(|(row, m)| row.iter().map(|v| v - m).collect())
        .collect();
    let scaled: Vec<Vec<f64>> = centered
        .iter()
        .map(|row| row.iter().zip(a).map(|(v, ai)| v * ai).collect())
        .collect();
    let mut cov = DMatrix::zeros(d, d);
    for r in 0..d {
        for c in 0..=r {
            let v = dot(&scaled[r], &centered[c]) / mass;
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
        cov[(r, r)] += reg;
    }
    (mass, DVector::from_vec(mean), cov)
}

/// k-means++ seeding on the weighted samples; covariances start at the
/// weighted sample covariance.
fn initialize<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    coords: &Coords,
    w: &[f64],
    k: usize,
    rng: &mut R,
    reg: f64,
) -> Result<Vec<Component>> {
    let n = x.ncols();
    let first = WeightedIndex::new(w)
        .map_err(|e| Error::Contract(format!("bad weights: {e}")))?
        .sample(rng);
    let mut centers = vec![first];
    let dist2 = |i: usize, c: usize| (x.column(i) - x.column(c)).norm_squared();
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(i, first)).collect();
    while centers.len() < k {
        let scores: Vec<f64> = nearest.iter().zip(w).map(|(d2, wi)| d2 * wi).collect();
        let next = match WeightedIndex::new(&scores) {
            Ok(dist) => dist.sample(rng),
            // Every weighted sample coincides with a center.
            Err(_) => WeightedIndex::new(w).expect("weights validated").sample(rng),
        };
        centers.push(next);
        for (i, d2) in nearest.iter_mut().enumerate() {
            *d2 = d2.min(dist2(i, next));
        }
    }
    let mut centers: Vec<DVector<f64>> = centers.into_iter().map(|c| x.column(c).into_owned()).collect();
    centers.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let (_, _, cov) = weighted_moments(coords, w, reg);
    centers
        .into_iter()
        .map(|c| {
            Component::new(1.0 / k as f64, c, cov.clone())
                .ok_or_else(|| Error::FitFailed("initial covariance is singular".into()))
        })
        .collect()
}

/// Responsibilities (`k x n`) and the regularized weighted objective.
fn e_step(x: &Coords, w: &[f64], comps: &[Component], reg: f64) -> (DMatrix<f64>, f64) {
    let n = x.n;
    let k = comps.len();
    let mut resp = DMatrix::zeros(k, n);
    for (j, c) in comps.iter().enumerate() {
        let base = c.log_weight + c.log_norm_const() - 0.5 * reg * c.precision_trace();
        for (i, m) in c.mahalanobis(x).into_iter().enumerate() {
            resp[(j, i)] = base - 0.5 * m;
        }
    }
    let mut objective = 0.0;
    for (i, mut col) in resp.column_iter_mut().enumerate() {
        let max = col.max();
        if max == f64::NEG_INFINITY {
            // Sample unreachable by every component.
            col.fill(1.0 / k as f64);
            objective = f64::NEG_INFINITY;
            continue;
        }
        // Flushing negligible terms keeps the arithmetic out of subnormals.
        col.apply(|v| *v = if *v - max < -700.0 { 0.0 } else { (*v - max).exp() });
        let total = col.sum();
        col /= total;
        objective += w[i] * (max + total.ln());
    }
    (resp, objective)
}

fn m_step(
    x: &Coords,
    w: &[f64],
    resp: &DMatrix<f64>,
    collapse_mass: f64,
    reg: f64,
) -> Result<(Vec<Component>, usize)> {
    let mut kept = Vec::new();
    let mut dropped = 0;
    for j in 0..resp.nrows() {
        let a: Vec<f64> = resp
            .row(j)
            .iter()
            .zip(w)
            .map(|(r, wi)| {
                let v = wi * r;
                if v < 1e-250 { 0.0 } else { v }
            })
            .collect();
        let mass: f64 = a.iter().sum();
        if !(mass >= collapse_mass) {
            dropped += 1;
            continue;
        }
        let (mass, mean, cov) = weighted_moments(x, &a, reg);
        match Component::new(mass, mean, cov) {
            Some(c) => kept.push((mass, c)),
            None => dropped += 1,
        }
    }
    if kept.is_empty() {
        return Err(Error::FitFailed("every mixture component collapsed".into()));
    }
    let total: f64 = kept.iter().map(|(m, _)| m).sum();
    let comps = kept
        .into_iter()
        .map(|(m, mut c)| {
            c.log_weight = (m / total).ln();
            c
        })
        .collect();
    Ok((comps, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::uniform_log_weights;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn std_normal_matrix(d: usize, n: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(d, n, |_, _| r.sample(StandardNormal))
    }

    #[test]
    fn single_component_equals_weighted_moments() {
        let mut r = rng(1);
        let x = std_normal_matrix(3, 200, &mut r);
        let raw: Vec<f64> = (0..200).map(|i| 1.0 + (i % 7) as f64).collect();
        let total: f64 = raw.iter().sum();
        let lw: Vec<f64> = raw.iter().map(|v| (v / total).ln()).collect();
        let fit = GaussianMixture::fit_em(&x, &lw, 1, &mut r).unwrap();
        let g = &fit.mixture;
        assert_eq!(g.weights(), vec![1.0]);
        // Oracle: direct weighted sums.
        let mut mean = [0.0; 3];
        for i in 0..200 {
            for j in 0..3 {
                mean[j] += raw[i] / total * x[(j, i)];
            }
        }
        for j in 0..3 {
            assert!((g.means()[0][j] - mean[j]).abs() < 1e-10);
            for l in 0..3 {
                let mut c = 0.0;
                for i in 0..200 {
                    c += raw[i] / total * (x[(j, i)] - mean[j]) * (x[(l, i)] - mean[l]);
                }
                if j == l {
                    c += DEFAULT_REGULARIZATION;
                }
                assert!((g.covariances()[0][(j, l)] - c).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn recovers_standard_normal() {
        let mut r = rng(2);
        let n = 10_000;
        let x = std_normal_matrix(2, n, &mut r);
        let fit = GaussianMixture::fit_em(&x, &uniform_log_weights(n), 1, &mut r).unwrap();
        let g = &fit.mixture;
        assert!(g.means()[0].norm() < 0.05);
        let diff = g.covariances()[0] - DMatrix::<f64>::identity(2, 2);
        assert!(diff.norm() < 0.05);
    }

    // The separated mixture's likelihood maximizer is located by brute force
    // over a grid of (mu1, mu2, weight) with unit variances; EM must agree.
    #[test]
    fn recovers_two_separated_components() {
        let mut r = rng(3);
        let n = 10_000;
        let x = DMatrix::from_fn(1, n, |_, i| {
            let c = if i % 2 == 0 { -3.0 } else { 3.0 };
            c + r.sample::<f64, _>(StandardNormal)
        });
        let fit = GaussianMixture::fit_em(&x, &uniform_log_weights(n), 2, &mut r).unwrap();
        let g = &fit.mixture;
        let mut comps: Vec<(f64, f64)> = g.means().iter().map(|m| m[0]).zip(g.weights()).collect();
        comps.sort_by(|a, b| a.0.total_cmp(&b.0));

        let data: Vec<f64> = x.iter().copied().collect();
        let loglik = |m1: f64, m2: f64, p: f64| -> f64 {
            data.iter()
                .map(|v| {
                    let a = p * (-0.5 * (v - m1).powi(2)).exp();
                    let b = (1.0 - p) * (-0.5 * (v - m2).powi(2)).exp();
                    (a + b).ln()
                })
                .sum()
        };
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
        for i in 0..21 {
            let m1 = -3.2 + 0.02 * i as f64;
            for j in 0..21 {
                let m2 = 2.8 + 0.02 * j as f64;
                for l in 0..11 {
                    let p = 0.45 + 0.01 * l as f64;
                    let ll = loglik(m1, m2, p);
                    if ll > best.0 {
                        best = (ll, m1, m2, p);
                    }
                }
            }
        }
        assert!((comps[0].0 - best.1).abs() < 0.05, "{comps:?} vs {best:?}");
        assert!((comps[1].0 - best.2).abs() < 0.05);
        assert!((comps[0].0 + 3.0).abs() < 0.1 && (comps[1].0 - 3.0).abs() < 0.1);
        assert!((comps[0].1 - 0.5).abs() < 0.05 && (comps[1].1 - 0.5).abs() < 0.05);
        assert!(fit.diagnostics.monotone);
    }

    #[test]
    fn objective_never_decreases() {
        let mut r = rng(4);
        let n = 3000;
        let x = DMatrix::from_fn(3, n, |j, i| {
            let shift = [0.0, 4.0, -2.0][i % 3] * (j as f64 - 1.0);
            shift + r.sample::<f64, _>(StandardNormal) * (1.0 + j as f64 * 0.3)
        });
        let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0f64).powi(4)).collect();
        let total: f64 = raw.iter().sum();
        let lw: Vec<f64> = raw.iter().map(|v| (v / total).ln()).collect();
        let fit = GaussianMixture::fit_em(&x, &lw, 8, &mut r).unwrap();
        assert!(fit.diagnostics.monotone);
        for pair in fit.diagnostics.objective_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9);
        }
        // Regularization floor on every covariance.
        for c in fit.mixture.covariances() {
            let eig = c.clone().symmetric_eigenvalues();
            assert!(eig.min() >= DEFAULT_REGULARIZATION * (1.0 - 1e-6));
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut r = rng(5);
        let n = 500;
        let x = std_normal_matrix(2, n, &mut r);
        let raw: Vec<f64> = (0..n).map(|i| 1.0 + (i % 5) as f64).collect();
        let total: f64 = raw.iter().sum();
        let lw: Vec<f64> = raw.iter().map(|v| (v / total).ln()).collect();
        let perm: Vec<usize> = (0..n).rev().collect();
        let xp = DMatrix::from_fn(2, n, |j, i| x[(j, perm[i])]);
        let lwp: Vec<f64> = perm.iter().map(|&i| lw[i]).collect();
        let a = GaussianMixture::fit_em(&x, &lw, 3, &mut rng(9)).unwrap().mixture;
        let b = GaussianMixture::fit_em(&xp, &lwp, 3, &mut rng(9)).unwrap().mixture;
        assert_eq!(a.weights(), b.weights());
        for (ma, mb) in a.means().iter().zip(b.means()) {
            assert_eq!(*ma, mb);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let mut r = rng(6);
        let x = std_normal_matrix(2, 400, &mut r);
        let lw = uniform_log_weights(400);
        let a = GaussianMixture::fit_em(&x, &lw, 4, &mut rng(1)).unwrap().mixture;
        let b = GaussianMixture::fit_em(&x, &lw, 4, &mut rng(1)).unwrap().mixture;
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn rejects_too_few_samples() {
        let mut r = rng(7);
        let x = std_normal_matrix(4, 20, &mut r);
        let e = GaussianMixture::fit_em(&x, &uniform_log_weights(20), 8, &mut r);
        assert!(matches!(e, Err(Error::Contract(_))));
    }

    #[test]
    fn density_examples() {
        let g = GaussianMixture::new(&[1.0], vec![DVector::zeros(1)], vec![DMatrix::identity(1, 1)]).unwrap();
        assert!((g.log_density(&[0.0]) + 0.918939).abs() < 1e-6);
        let g2 = GaussianMixture::new(
            &[0.5, 0.5],
            vec![DVector::zeros(1), DVector::zeros(1)],
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        )
        .unwrap();
        for u in [-2.0, 0.0, 0.7] {
            assert!((g.log_density(&[u]) - g2.log_density(&[u])).abs() < 1e-12);
        }
        let cols = DMatrix::from_row_slice(1, 3, &[-2.0, 0.0, 0.7]);
        for (a, u) in g2.log_density_columns(&cols).iter().zip([-2.0, 0.0, 0.7]) {
            assert!((a - g2.log_density(&[u])).abs() < 1e-12);
        }
    }

    // Importance-sampling estimate of the integral against a wide Gaussian.
    #[test]
    fn density_integrates_to_one() {
        let g = GaussianMixture::new(
            &[0.3, 0.7],
            vec![DVector::from_vec(vec![-1.0, 0.5]), DVector::from_vec(vec![2.0, -1.0])],
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
                DMatrix::from_row_slice(2, 2, &[0.4, -0.1, -0.1, 0.8]),
            ],
        )
        .unwrap();
        let mut r = rng(8);
        let scale = 4.0;
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let u: [f64; 2] = [
                scale * r.sample::<f64, _>(StandardNormal),
                scale * r.sample::<f64, _>(StandardNormal),
            ];
            let log_q = -2.0 * LN_SQRT_2PI - 2.0 * scale.ln() - 0.5 * (u[0] * u[0] + u[1] * u[1]) / (scale * scale);
            acc += (g.log_density(&u) - log_q).exp();
        }
        let integral = acc / n as f64;
        assert!((integral - 1.0).abs() < 0.01, "{integral}");
    }

    #[test]
    fn near_point_mass_sampling() {
        let g = GaussianMixture::new_regularized(&[1.0], vec![DVector::from_vec(vec![5.0])], vec![DMatrix::zeros(1, 1)])
            .unwrap();
        let mut r = rng(10);
        let s = g.sample(10_000, &mut r);
        let mean = s.mean();
        let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9_999.0).sqrt();
        assert!((mean - 5.0).abs() < 1e-4);
        assert!((sd - DEFAULT_REGULARIZATION.sqrt()).abs() < 0.05 * DEFAULT_REGULARIZATION.sqrt());
    }

    #[test]
    fn sample_then_refit_round_trip() {
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let g = GaussianMixture::new(&[1.0], vec![mean.clone()], vec![cov.clone()]).unwrap();
        let mut r = rng(11);
        let n = 100_000;
        let s = g.sample(n, &mut r);
        let fit = GaussianMixture::fit_em(&s, &uniform_log_weights(n), 1, &mut r).unwrap().mixture;
        assert!((fit.means()[0] - mean).norm() < 0.02);
        assert!((fit.covariances()[0] - cov).norm() < 0.03);
    }

    #[test]
    fn component_frequencies_follow_weights() {
        let g = GaussianMixture::new(
            &[0.2, 0.8],
            vec![DVector::from_vec(vec![-100.0]), DVector::from_vec(vec![100.0])],
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        )
        .unwrap();
        let mut r = rng(12);
        let n = 20_000;
        let s = g.sample(n, &mut r);
        let left = s.iter().filter(|v| **v < 0.0).count() as f64;
        let sd = (n as f64 * 0.2 * 0.8).sqrt();
        assert!((left - 0.2 * n as f64).abs() < 3.0 * sd);
    }
}
