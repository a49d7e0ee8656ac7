use serde::{Deserialize, Serialize};

use super::bounds::{margin_bound, min_r_bound};
use super::estimators::{estimate_margin, estimate_min_r, EstimatorConfig};
use crate::error::{Error, Result};
use crate::numerics::stats::{mean, quantile, std_dev};
use crate::numerics::{RngStream, Tensor};
use crate::scalar::Scalar;
use crate::vae::VaeModel;

/// Version tag written at the top of report CSVs.
pub const REPORT_SCHEMA: &str = "robustness-report/1";

/// Everything measured for one (model, input) pair. One CSV row each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub model_id: String,
    pub input_id: usize,
    /// Reconstruction-space radius the margin quantities refer to.
    pub r: f64,
    pub p_inside: f64,
    pub p_inside_se: f64,
    pub p_inside_low: f64,
    pub p_inside_high: f64,
    pub r_min_estimate: f64,
    pub r_min_bound: f64,
    pub margin_estimate: f64,
    pub margin_bound: f64,
    pub min_sigma: f64,
    pub jac_norm: f64,
    pub robust_at_origin: bool,
    pub flat_encoder: bool,
    pub trust_mismatch: f64,
    pub outside_trust_region: bool,
    pub n_samples: usize,
    pub seed: u64,
}

/// Runs every estimator for one input. Each estimator draws from its own
/// stream derived from `seed`, so reports can be computed in any order.
#[allow(clippy::too_many_arguments)]
pub fn assess<S, F>(
    model: &VaeModel<S>,
    model_id: &str,
    input_id: usize,
    x: &Tensor<S>,
    r: f64,
    cfg: &EstimatorConfig,
    attack: F,
    seed: u64,
) -> Result<RobustnessReport>
where
    S: Scalar,
    F: FnMut(&VaeModel<S>, &Tensor<S>, f64, &mut RngStream) -> Result<Tensor<S>>,
{
    let root = RngStream::new(seed, input_id as u64);
    let min_r = estimate_min_r(model, x, cfg, &mut root.derive(1))?;
    let bound = margin_bound(model, x, r, &mut root.derive(2), cfg.samples)?;
    let margin = estimate_margin(model, x, r, cfg, attack, &mut root.derive(3))?;
    let p = bound.p_inside;
    Ok(RobustnessReport {
        model_id: model_id.to_string(),
        input_id,
        r,
        p_inside: p.estimate,
        p_inside_se: p.std_error,
        p_inside_low: p.wilson_low,
        p_inside_high: p.wilson_high,
        r_min_estimate: min_r.r,
        r_min_bound: min_r_bound(model, x)?,
        margin_estimate: margin.margin,
        margin_bound: bound.bound,
        min_sigma: bound.min_sigma,
        jac_norm: bound.jac_norm,
        robust_at_origin: margin.robust_at_origin,
        flat_encoder: bound.flat_encoder,
        trust_mismatch: bound.trust_mismatch,
        outside_trust_region: bound.outside_trust_region,
        n_samples: cfg.samples,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginSummary {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Dataset-level margin: the mean of per-input margins plus their spread.
pub fn aggregate_margin(reports: &[RobustnessReport]) -> Result<MarginSummary> {
    summarize(&reports.iter().map(|r| r.margin_estimate).collect::<Vec<_>>())
}

pub fn summarize(values: &[f64]) -> Result<MarginSummary> {
    if values.is_empty() {
        return Err(Error::domain("cannot summarise an empty set of margins"));
    }
    Ok(MarginSummary {
        count: values.len(),
        mean: mean(values),
        std_dev: std_dev(values),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        q25: quantile(values, 0.25),
        median: quantile(values, 0.5),
        q75: quantile(values, 0.75),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries() {
        assert!(summarize(&[]).is_err());
        assert_eq!(summarize(&[4.0]).unwrap().mean, 4.0);
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.median, s.min, s.max), (2.0, 2.0, 1.0, 3.0));
    }

    #[test]
    fn assess_fills_every_field() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[0.3, 0.3])).unwrap();
        let cfg = EstimatorConfig {
            samples: 500,
            initial_margin: 2.0,
            step: 0.1,
            ..Default::default()
        };
        let attack = |_: &VaeModel, _: &Tensor, radius: f64, _: &mut RngStream| -> Result<Tensor> {
            Ok(Tensor::vector_f64(&[radius, 0.0]))
        };
        let rep = assess(&m, "m0", 3, &Tensor::vector_f64(&[0.0, 0.0]), 1.0, &cfg, attack, 9).unwrap();
        assert_eq!(rep.input_id, 3);
        assert!(rep.robust_at_origin);
        assert!(rep.margin_estimate > 0.0 && rep.margin_bound > 0.0);
        assert!((rep.jac_norm - 2f64.sqrt()).abs() < 1e-12);
        assert!((rep.min_sigma - 0.3).abs() < 1e-12);
        assert_eq!(aggregate_margin(std::slice::from_ref(&rep)).unwrap().mean, rep.margin_estimate);
    }
}
