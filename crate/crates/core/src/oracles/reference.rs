use nalgebra::DMatrix;
use serde::Serialize;

use super::linear_gaussian::to_matrix;
use crate::error::{Error, Result};
use crate::numerics::stats::{mean, quantile, std_dev};
use crate::numerics::{RngStream, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SvdOptimum {
    pub delta: Vec<f64>,
    pub damage: f64,
    pub sigma_max: f64,
    /// The top singular value is repeated, so `delta` is one of many maximisers.
    pub degenerate: bool,
}

/// Best perturbation of norm `budget` for the linear map `A W`, where `W` is
/// the encoder `[d_Z, d_X]` and `A` the decoder `[d_X, d_Z]`.
pub fn svd_attack_optimum(encoder: &Tensor<f64>, decoder: &Tensor<f64>, budget: f64) -> Result<SvdOptimum> {
    if !(budget >= 0.0) {
        return Err(Error::domain(format!("budget must be non-negative, got {budget}")));
    }
    let m: DMatrix<f64> = to_matrix(decoder)? * to_matrix(encoder)?;
    let svd = m.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::NonFinite("svd".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = order[0];
    let s1 = svd.singular_values[top];
    let degenerate = order
        .get(1)
        .is_some_and(|&i| s1 - svd.singular_values[i] <= 1e-9 * s1.max(1e-300));
    let delta = v_t.row(top).iter().map(|v| v * budget).collect();
    Ok(SvdOptimum {
        delta,
        damage: budget * s1,
        sigma_max: s1,
        degenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum McDistribution {
    StandardNormal,
    /// `|eta|` for `eta ~ N(0, 1)`.
    HalfNormal,
    /// `||eta||₂` for `eta ~ N(0, I_k)`.
    ChiNorm(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum McStatistic {
    Mean,
    Median,
    Quantile(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
}

const BATCHES: usize = 20;

/// Plain Monte Carlo estimate of a statistic. Means use the sample standard
/// error; quantiles use the spread of 20 batch estimates.
pub fn mc_reference(dist: McDistribution, stat: McStatistic, n: usize, rng: &mut RngStream) -> Result<McEstimate> {
    if n < 1000 {
        return Err(Error::domain("mc_reference needs at least 1000 draws"));
    }
    let draws: Vec<f64> = (0..n)
        .map(|_| match dist {
            McDistribution::StandardNormal => rng.normal(),
            McDistribution::HalfNormal => rng.normal().abs(),
            McDistribution::ChiNorm(k) => (0..k).map(|_| rng.normal().powi(2)).sum::<f64>().sqrt(),
        })
        .collect();
    let q = match stat {
        McStatistic::Mean => {
            return Ok(McEstimate {
                estimate: mean(&draws),
                std_error: std_dev(&draws) / (n as f64).sqrt(),
                n,
            })
        }
        McStatistic::Median => 0.5,
        McStatistic::Quantile(q) => q,
    };
    let per = n / BATCHES;
    let batch: Vec<f64> = draws.chunks(per).take(BATCHES).map(|c| quantile(c, q)).collect();
    Ok(McEstimate {
        estimate: quantile(&draws, q),
        std_error: std_dev(&batch) / (BATCHES as f64).sqrt(),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_examples() {
        let a = Tensor::from_f64(&[2, 2], &[2.0, 0.0, 0.0, 1.0]).unwrap();
        let o = svd_attack_optimum(&Tensor::eye(2), &a, 3.0).unwrap();
        assert!((o.damage - 6.0).abs() < 1e-12);
        assert!((o.delta[0].abs() - 3.0).abs() < 1e-12 && o.delta[1].abs() < 1e-12);
        assert!(!o.degenerate);

        let i = svd_attack_optimum(&Tensor::eye(2), &Tensor::eye(2), 1.0).unwrap();
        assert!((i.damage - 1.0).abs() < 1e-12);
        assert!(i.degenerate);
        assert_eq!(svd_attack_optimum(&Tensor::eye(2), &a, 0.0).unwrap().damage, 0.0);
    }

    #[test]
    fn mc_needs_enough_draws() {
        assert!(mc_reference(McDistribution::StandardNormal, McStatistic::Mean, 10, &mut RngStream::new(0, 0)).is_err());
    }
}
