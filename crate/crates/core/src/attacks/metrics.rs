use serde::{Deserialize, Serialize};

use super::AttackTarget;
use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, RngStream, Tensor};
use crate::robustness::reconstruction_distances;
use crate::scalar::Scalar;
use crate::vae::VaeModel;

/// `|log p(x|z*) - log p(x|z)| / |log p(x|z)|` with `z = mu(x)` and
/// `z* = mu(x + delta)`.
pub fn degradation<S: Scalar>(model: &VaeModel<S>, x: &Tensor<S>, delta: &Tensor<S>) -> Result<f64> {
    let z = model.encode_mu(x)?;
    let z_star = model.encode_mu(&x.add(delta))?;
    let clean = model.log_likelihood(x, &z)?.as_f64();
    let attacked = model.log_likelihood(x, &z_star)?.as_f64();
    if clean == 0.0 {
        return Err(Error::domain("clean log-likelihood is zero; degradation undefined"));
    }
    Ok((attacked - clean).abs() / clean.abs())
}

/// `n` draws of the reconstruction distance under an attack: latents are
/// sampled from the encoding that `target` exposes to `x + delta` and
/// compared with the clean reference `g(mu(x))`.
pub fn damage_distribution<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    delta: &Tensor<S>,
    target: AttackTarget,
    rng: &mut RngStream,
    n: usize,
) -> Result<Vec<f64>> {
    let clean = model.encode(x)?;
    let reference = model.decode(&clean.mu)?;
    let pert = model.encode(&x.add(delta))?;
    let (mu, sigma) = match target {
        AttackTarget::MuOnly => (&pert.mu, &clean.sigma),
        AttackTarget::SigmaOnly => (&clean.mu, &pert.sigma),
        AttackTarget::Both => (&pert.mu, &pert.sigma),
    };
    reconstruction_distances(model, mu, sigma, &reference, rng, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub sigma_eps: f64,
    pub mean_log_likelihood: f64,
    pub std_error: f64,
}

/// Mean `log p(x | mu(x + eps))` over `n` draws of `eps ~ N(0, sigma_eps² I)`
/// for each noise level.
pub fn noise_sensitivity<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    sigma_eps_grid: &[f64],
    rng: &mut RngStream,
    n: usize,
) -> Result<Vec<NoisePoint>> {
    if sigma_eps_grid.is_empty() || n == 0 {
        return Err(Error::domain("noise sensitivity needs a non-empty grid and n >= 1"));
    }
    let d = model.data_dim;
    sigma_eps_grid
        .iter()
        .map(|&s| {
            if s == 0.0 {
                let z = model.encode_mu(x)?;
                return Ok(NoisePoint {
                    sigma_eps: s,
                    mean_log_likelihood: model.log_likelihood(x, &z)?.as_f64(),
                    std_error: 0.0,
                });
            }
            let eps: Tensor<S> = gaussian_sample(rng, &[n, d]);
            let noisy = eps.scale(S::lit(s)).add_row(x);
            let z = model.encode_mu(&noisy)?;
            let ll: Vec<f64> = model.log_likelihood_rows(x, &z)?.iter().map(|v| v.as_f64()).collect();
            Ok(NoisePoint {
                sigma_eps: s,
                mean_log_likelihood: crate::numerics::stats::mean(&ll),
                std_error: crate::numerics::stats::std_dev(&ll) / (n as f64).sqrt(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn degradation_examples() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1.0])).unwrap();
        let x = Tensor::vector_f64(&[1.0]);
        assert_eq!(degradation(&m, &x, &Tensor::vector_f64(&[0.0])).unwrap(), 0.0);

        // log p(x|z) = -½ln2π - 0.5 needs residual 1; log p(x|z*) = -½ln2π - 2 needs residual 2.
        let shifted: VaeModel = VaeModel::linear(
            &Tensor::eye(1),
            &Tensor::vector_f64(&[1.0]),
            &Tensor::vector_f64(&[1.0]),
            &Tensor::eye(1),
            &Tensor::zeros(&[1]),
            crate::vae::Likelihood::Gaussian { gamma: 1.0 },
        )
        .unwrap();
        let x0 = Tensor::vector_f64(&[0.0]);
        let got = degradation(&shifted, &x0, &Tensor::vector_f64(&[1.0])).unwrap();
        let c = -0.5 * (2.0 * PI).ln();
        let want = ((c - 2.0) - (c - 0.5)).abs() / (c - 0.5).abs();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 1.057).abs() < 1e-3);
    }

    #[test]
    fn damage_distribution_respects_the_target() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[0.5])).unwrap();
        let x = Tensor::vector_f64(&[0.0]);
        let delta = Tensor::vector_f64(&[3.0]);
        let sigma_only =
            damage_distribution(&m, &x, &delta, AttackTarget::SigmaOnly, &mut RngStream::new(1, 0), 2000).unwrap();
        let clean = damage_distribution(&m, &x, &Tensor::zeros(&[1]), AttackTarget::Both, &mut RngStream::new(1, 0), 2000)
            .unwrap();
        assert_eq!(sigma_only, clean);
        let mu_only = damage_distribution(&m, &x, &delta, AttackTarget::MuOnly, &mut RngStream::new(1, 0), 2000).unwrap();
        assert!(crate::numerics::stats::median(&mu_only) > 2.0);
    }

    #[test]
    fn noise_curve_matches_closed_form() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1.0])).unwrap();
        let x = Tensor::vector_f64(&[0.3]);
        let grid = [0.0, 0.1, 0.25, 0.5];
        let pts = noise_sensitivity(&m, &x, &grid, &mut RngStream::new(7, 0), 100_000).unwrap();
        let c = -0.5 * (2.0 * PI).ln();
        assert_eq!(pts[0].mean_log_likelihood, c);
        for p in &pts {
            let want = c - 0.5 * p.sigma_eps * p.sigma_eps;
            assert!((p.mean_log_likelihood - want).abs() < 4.0 * p.std_error + 1e-12);
        }
        assert!(noise_sensitivity(&m, &x, &[], &mut RngStream::new(7, 0), 10).is_err());
    }
}
