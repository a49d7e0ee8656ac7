//! r-robustness of a trained VAE around a single input.
//!
//! `Δ(x)` is the distance between a reconstruction decoded from a sampled
//! latent and the reference reconstruction `g(mu(x))`. A model is r-robust at
//! `x` when `p(||Δ(x)||₂ <= r) > m`. This module estimates the smallest such
//! `r`, the input-space margin `R^r_X(x)` within which every perturbation
//! keeps the model r-robust, and the closed-form lower bounds on both.

mod bounds;
mod estimators;
mod report;
mod sampling;

pub use bounds::{
    linearisation_mismatch, margin_bound, margin_bound_formula, min_r_bound, min_r_bound_from,
    surrogate_objective, MarginBound, TRUST_REGION_TOLERANCE,
};
pub use estimators::{estimate_margin, estimate_min_r, EstimatorConfig, MarginEstimate, MinREstimate};
pub use report::{aggregate_margin, assess, summarize, MarginSummary, RobustnessReport, REPORT_SCHEMA};
pub use sampling::{
    delta_sample, inside_fraction, perturbed_delta_sample, reconstruction_distances, SigmaSource,
};
