//! Closed-form ground truth for tests and user validations.
//!
//! Linear-Gaussian models admit exact posteriors, evidences and tempered
//! posteriors; linear encoder/decoder pairs admit an exact maximum-damage
//! perturbation. Dense algebra here goes through `nalgebra` so that these
//! references do not share code with the estimators they check.

mod linear_gaussian;
mod reference;

pub use linear_gaussian::{
    beta_elbo, beta_elbo_gradient, family_size, max_linear_evidence, pack_gaussian, tempered_posterior,
    verify_theorem2, Gaussian, LinearGaussianVae, Theorem2Report,
};
pub use reference::{mc_reference, svd_attack_optimum, McDistribution, McEstimate, McStatistic, SvdOptimum};
