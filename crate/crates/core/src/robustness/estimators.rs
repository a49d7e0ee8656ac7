use serde::{Deserialize, Serialize};

use super::sampling::{delta_sample, inside_fraction, perturbed_delta_sample, SigmaSource};
use crate::error::{Error, Result};
use crate::numerics::stats::Proportion;
use crate::numerics::{RngStream, Tensor};
use crate::scalar::Scalar;
use crate::vae::VaeModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Required inside-probability; robustness means `p > m`.
    pub m: f64,
    /// Grid increment for both `r` and the margin search.
    pub step: f64,
    /// Monte Carlo draws per grid point.
    pub samples: usize,
    /// Independent attacks per margin candidate.
    pub restarts: usize,
    /// Largest margin candidate; the search walks down from here.
    pub initial_margin: f64,
    /// `estimate_min_r` gives up with [`Error::EstimatorCap`] beyond this radius.
    pub r_cap: f64,
    pub sigma_source: SigmaSource,
    /// Bisection steps between the first passing grid point and the failing
    /// one above it. Zero keeps the plain grid search.
    pub bisection_steps: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            m: 0.5,
            step: 0.05,
            samples: 10_000,
            restarts: 5,
            initial_margin: 10.0,
            r_cap: 1e3,
            sigma_source: SigmaSource::Perturbed,
            bisection_steps: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m < 1.0) {
            return Err(Error::Config(format!("m must lie in (0, 1), got {}", self.m)));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Config(format!("step must be positive, got {}", self.step)));
        }
        if self.samples == 0 || self.restarts == 0 {
            return Err(Error::Config("samples and restarts must be at least 1".into()));
        }
        if !(self.initial_margin >= 0.0) || !(self.r_cap > 0.0) {
            return Err(Error::Config("initial margin and r cap must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinREstimate {
    pub r: f64,
    pub p_inside: Proportion,
    pub iterations: usize,
}

/// Smallest multiple of `cfg.step` at which the empirical probability of
/// `||Δ(x)||₂ <= r` exceeds `cfg.m`, drawing a fresh batch for every grid point.
pub fn estimate_min_r<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    cfg: &EstimatorConfig,
    rng: &mut RngStream,
) -> Result<MinREstimate> {
    cfg.validate()?;
    let mut k = 0usize;
    loop {
        let d = delta_sample(model, x, rng, cfg.samples)?;
        k += 1;
        let r = k as f64 * cfg.step;
        let p = inside_fraction(&d, r);
        if p.estimate > cfg.m {
            return Ok(MinREstimate {
                r,
                p_inside: p,
                iterations: k,
            });
        }
        if r > cfg.r_cap {
            return Err(Error::EstimatorCap(format!(
                "r exceeded {} with inside-probability {}",
                cfg.r_cap, p.estimate
            )));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    pub margin: f64,
    /// Whether `p > m` holds at `delta = 0`. When false the margin is 0.
    pub robust_at_origin: bool,
    pub p_origin: Proportion,
    /// Worst inside-probability over the restarts at the returned margin.
    pub p_at_margin: Option<Proportion>,
    pub candidates: usize,
}

/// Downward grid search for the input-space margin `R^r_X(x)`.
///
/// Candidates are `initial_margin - k * step`. At each candidate `attack` is
/// called `cfg.restarts` times, each with its own derived stream, to find a
/// perturbation of that norm; reconstructions are then sampled around the
/// perturbed encoding. The first candidate whose worst restart still has
/// inside-probability above 0.5 is returned.
pub fn estimate_margin<S, F>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    r: f64,
    cfg: &EstimatorConfig,
    mut attack: F,
    rng: &mut RngStream,
) -> Result<MarginEstimate>
where
    S: Scalar,
    F: FnMut(&VaeModel<S>, &Tensor<S>, f64, &mut RngStream) -> Result<Tensor<S>>,
{
    cfg.validate()?;
    if !(r > 0.0) {
        return Err(Error::domain(format!("r must be positive, got {r}")));
    }
    let p_origin = inside_fraction(&delta_sample(model, x, rng, cfg.samples)?, r);
    if p_origin.estimate <= cfg.m {
        return Ok(MarginEstimate {
            margin: 0.0,
            robust_at_origin: false,
            p_origin,
            p_at_margin: None,
            candidates: 0,
        });
    }
    let base = rng.derive(0x6d61_7267_696e);
    let mut probe = |radius: f64, tag: u64| -> Result<Option<Proportion>> {
        let mut worst: Option<Proportion> = None;
        for j in 0..cfg.restarts {
            let mut stream = base.derive(tag.wrapping_mul(1 << 16).wrapping_add(j as u64));
            let delta = attack(model, x, radius, &mut stream)?;
            let d = perturbed_delta_sample(model, x, &delta, cfg.sigma_source, &mut stream, cfg.samples)?;
            let p = inside_fraction(&d, r);
            if worst.is_none_or(|w| p.estimate < w.estimate) {
                worst = Some(p);
            }
            if p.estimate <= 0.5 {
                return Ok(None);
            }
        }
        Ok(worst)
    };

    let mut k = 0usize;
    loop {
        let radius = cfg.initial_margin - k as f64 * cfg.step;
        if radius <= 0.0 {
            return Ok(MarginEstimate {
                margin: 0.0,
                robust_at_origin: true,
                p_origin,
                p_at_margin: None,
                candidates: k,
            });
        }
        k += 1;
        let Some(p) = probe(radius, k as u64)? else {
            continue;
        };
        let mut best = (radius, p);
        if k > 1 && cfg.bisection_steps > 0 {
            let (mut lo, mut hi) = (radius, radius + cfg.step);
            for i in 0..cfg.bisection_steps {
                let mid = 0.5 * (lo + hi);
                match probe(mid, (1 << 40) + (k as u64) * 64 + i as u64)? {
                    Some(pm) => {
                        lo = mid;
                        best = (mid, pm);
                    }
                    None => hi = mid,
                }
            }
        }
        return Ok(MarginEstimate {
            margin: best.0,
            robust_at_origin: true,
            p_origin,
            p_at_margin: Some(best.1),
            candidates: k,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::l2_project;
    use crate::vae::Likelihood;

    fn shift_attack(model: &VaeModel, _x: &Tensor, radius: f64, _rng: &mut RngStream) -> Result<Tensor> {
        let mut d = Tensor::zeros(&[model.data_dim]);
        d.data_mut()[0] = radius;
        l2_project(&d, radius)
    }

    #[test]
    fn zero_variance_min_r_is_one_step() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1e-12])).unwrap();
        let cfg = EstimatorConfig {
            samples: 100,
            ..Default::default()
        };
        let est = estimate_min_r(&m, &Tensor::vector_f64(&[0.4]), &cfg, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(est.r, cfg.step);
        assert_eq!(est.iterations, 1);
    }

    #[test]
    fn cap_is_enforced() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[100.0])).unwrap();
        let cfg = EstimatorConfig {
            samples: 100,
            r_cap: 1.0,
            ..Default::default()
        };
        let r = estimate_min_r(&m, &Tensor::vector_f64(&[0.0]), &cfg, &mut RngStream::new(0, 0));
        assert!(matches!(r, Err(Error::EstimatorCap(_))));
    }

    #[test]
    fn constant_decoder_keeps_the_initial_margin() {
        let m: VaeModel = VaeModel::linear(
            &Tensor::eye(1),
            &Tensor::zeros(&[1]),
            &Tensor::vector_f64(&[1.0]),
            &Tensor::zeros(&[1, 1]),
            &Tensor::vector_f64(&[0.2]),
            Likelihood::Gaussian { gamma: 1.0 },
        )
        .unwrap();
        let cfg = EstimatorConfig {
            samples: 200,
            ..Default::default()
        };
        let est = estimate_margin(&m, &Tensor::vector_f64(&[0.0]), 1.0, &cfg, shift_attack, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(est.margin, 10.0);
        assert_eq!(est.candidates, 1);
    }

    #[test]
    fn deterministic_limit_margin_is_r() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1e-9, 1e-9])).unwrap();
        let cfg = EstimatorConfig {
            samples: 200,
            initial_margin: 2.0,
            ..Default::default()
        };
        let est = estimate_margin(&m, &Tensor::vector_f64(&[0.1, 0.1]), 1.0, &cfg, shift_attack, &mut RngStream::new(2, 0)).unwrap();
        assert!((est.margin - 1.0).abs() <= cfg.step + 1e-12, "{}", est.margin);
    }

    #[test]
    fn not_robust_at_origin_returns_zero() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[5.0])).unwrap();
        let cfg = EstimatorConfig {
            samples: 500,
            ..Default::default()
        };
        let est = estimate_margin(&m, &Tensor::vector_f64(&[0.0]), 0.1, &cfg, shift_attack, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(est.margin, 0.0);
        assert!(!est.robust_at_origin);
    }

    #[test]
    fn bisection_refines_between_grid_points() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1e-9])).unwrap();
        let cfg = EstimatorConfig {
            samples: 50,
            step: 0.5,
            initial_margin: 3.0,
            bisection_steps: 12,
            ..Default::default()
        };
        let est = estimate_margin(&m, &Tensor::vector_f64(&[0.0]), 1.3, &cfg, shift_attack, &mut RngStream::new(4, 0)).unwrap();
        assert!((est.margin - 1.3).abs() < 1e-3, "{}", est.margin);
    }
}
