//! Distributions, iso-probabilistic transforms, log-space weight arithmetic
//! and weighted particle ensembles.

mod ensemble;
mod marginal;
mod normal;
mod prior;
mod weights;

pub use ensemble::{multinomial_indices, weighted_quantile, WeightedEnsemble};
pub use marginal::{lognormal_params_from_moments, Marginal, MeasurementError};
pub use normal::{std_normal_cdf, std_normal_inv_cdf, std_normal_sf, LN_SQRT_2PI};
pub use prior::{log_prior_density_u, PriorModel};
pub use weights::{ess, log_sum_exp, normalize_log_weights, uniform_log_weights};
