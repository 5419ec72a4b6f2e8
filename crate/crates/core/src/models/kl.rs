//! Karhunen-Loeve expansion of a stationary field with exponential
//! correlation `exp(-|x - y| / l)` on `[0, L]`, by the Nystrom method on a
//! uniform midpoint grid.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const TRUTH_NODES: usize = 2000;
pub const TRUTH_MODES: usize = 400;

#[derive(Clone, Debug)]
pub struct KlBasis {
    pub beam_length: f64,
    pub corr_length: f64,
    /// Cell midpoints.
    pub nodes: Vec<f64>,
    /// Eigenvalues in decreasing order.
    pub eigenvalues: Vec<f64>,
    /// `phi[(i, j)]`: mode `j` at node `i`, normalized to unit L2 norm on
    /// `[0, L]`.
    pub phi: DMatrix<f64>,
}

impl KlBasis {
    pub fn new(beam_length: f64, corr_length: f64, n_nodes: usize, n_modes: usize) -> Result<Self> {
        if !(beam_length > 0.0 && corr_length > 0.0) || n_nodes < 2 {
            return Err(Error::Domain("KL basis needs positive lengths and >= 2 nodes".into()));
        }
        if n_modes == 0 || n_modes > n_nodes {
            return Err(Error::Domain(format!("n_modes must lie in 1..={n_nodes}")));
        }
        let h = beam_length / n_nodes as f64;
        let nodes: Vec<f64> = (0..n_nodes).map(|i| (i as f64 + 0.5) * h).collect();
        let kernel = |i: usize, j: usize| h * (-(nodes[i] - nodes[j]).abs() / corr_length).exp();
        let mut pairs = symmetric_toeplitz_eigenpairs(n_nodes, &kernel);
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        pairs.truncate(n_modes);
        if pairs.iter().any(|(l, _)| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Reference("KL eigenvalues are not positive".into()));
        }
        let scale = 1.0 / h.sqrt();
        let mut phi = DMatrix::zeros(n_nodes, n_modes);
        let mut eigenvalues = Vec::with_capacity(n_modes);
        for (j, (lambda, v)) in pairs.into_iter().enumerate() {
            // Fix the sign so the first node is non-negative.
            let sign = if v[0] < 0.0 { -scale } else { scale };
            phi.set_column(j, &(v * sign));
            eigenvalues.push(lambda);
        }
        Ok(Self {
            beam_length,
            corr_length,
            nodes,
            eigenvalues,
            phi,
        })
    }

    /// Basis used for truth generation: 10 m beam, 2 m correlation length,
    /// 2000 nodes, 400 modes. Computed once per process.
    pub fn standard() -> Result<&'static KlBasis> {
        static BASIS: OnceLock<std::result::Result<KlBasis, String>> = OnceLock::new();
        BASIS
            .get_or_init(|| {
                KlBasis::new(
                    super::corrosion::BEAM_LENGTH,
                    super::corrosion::CORR_LENGTH,
                    TRUTH_NODES,
                    TRUTH_MODES,
                )
                .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| Error::Reference(e.clone()))
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Truncated Mercer sum `sum_j lambda_j phi_j(x)^2` at every node; the
    /// exact kernel diagonal is 1.
    pub fn variance_partial_sum(&self) -> Vec<f64> {
        (0..self.nodes.len())
            .map(|i| {
                self.eigenvalues
                    .iter()
                    .enumerate()
                    .map(|(j, l)| l * self.phi[(i, j)].powi(2))
                    .sum()
            })
            .collect()
    }

    /// Unit-variance field `sum_j sqrt(lambda_j) phi_j xi_j` at the nodes.
    pub fn synthesize(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.n_modes() {
            return Err(Error::Domain(format!("expected {} KL coefficients", self.n_modes())));
        }
        let coef: Vec<f64> = xi.iter().zip(&self.eigenvalues).map(|(x, l)| x * l.sqrt()).collect();
        let field = &self.phi * nalgebra::DVector::from_vec(coef);
        Ok(field.iter().copied().collect())
    }

    /// Linear interpolation of nodal values at `x`, constant beyond the end
    /// nodes.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let n = self.nodes.len();
        let h = self.beam_length / n as f64;
        let s = x / h - 0.5;
        if s <= 0.0 {
            return values[0];
        }
        let i = s.floor() as usize;
        if i >= n - 1 {
            return values[n - 1];
        }
        let f = s - i as f64;
        values[i] * (1.0 - f) + values[i + 1] * f
    }
}

/// Eigenpairs of a symmetric Toeplitz (hence centrosymmetric) matrix. With
/// `K = [[A, B], [B^T, J A J]]` the even and odd eigenvectors `[x; +-J x]`
/// come from the half-size matrices `A +- B J`.
fn symmetric_toeplitz_eigenpairs(
    n: usize,
    k: &dyn Fn(usize, usize) -> f64,
) -> Vec<(f64, nalgebra::DVector<f64>)> {
    if n % 2 == 1 {
        let e = SymmetricEigen::new(DMatrix::from_fn(n, n, k));
        return e
            .eigenvalues
            .iter()
            .zip(e.eigenvectors.column_iter())
            .map(|(&l, v)| (l, v.into_owned()))
            .collect();
    }
    let p = n / 2;
    let norm = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity(n);
    for sign in [1.0, -1.0] {
        let half = DMatrix::from_fn(p, p, |i, j| k(i, j) + sign * k(i, n - 1 - j));
        let e = SymmetricEigen::new(half);
        for (&l, x) in e.eigenvalues.iter().zip(e.eigenvectors.column_iter()) {
            let v = nalgebra::DVector::from_fn(n, |i, _| {
                if i < p {
                    x[i] * norm
                } else {
                    sign * x[n - 1 - i] * norm
                }
            });
            out.push((l, v));
        }
    }
    out
}
