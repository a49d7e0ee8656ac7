use crate::error::{Error, Result};
use crate::numerics::stats::Proportion;
use crate::numerics::{gaussian_sample, RngStream, Tensor};
use crate::scalar::Scalar;
use crate::vae::VaeModel;

const CHUNK: usize = 2048;

/// Which encoder std is used when sampling around a perturbed input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    /// `sigma(x + delta)`, the std of the perturbed encoding.
    #[default]
    Perturbed,
    /// `sigma(x)`, the std of the clean encoding.
    Clean,
}

/// `n` draws of `||g(mu + eta * sigma) - reference||₂` with fresh `eta`.
pub fn reconstruction_distances<S: Scalar>(
    model: &VaeModel<S>,
    mu: &Tensor<S>,
    sigma: &Tensor<S>,
    reference: &Tensor<S>,
    rng: &mut RngStream,
    n: usize,
) -> Result<Vec<f64>> {
    let dz = model.latent_dim;
    if mu.len() != dz || sigma.len() != dz || reference.len() != model.data_dim {
        return Err(Error::shape("reconstruction_distances operand sizes"));
    }
    let mut out = Vec::with_capacity(n);
    let mut left = n;
    while left > 0 {
        let c = left.min(CHUNK);
        let eta: Tensor<S> = gaussian_sample(rng, &[c, dz]);
        let mut z = eta.into_data();
        for row in z.chunks_mut(dz) {
            for ((v, &m), &s) in row.iter_mut().zip(mu.data()).zip(sigma.data()) {
                *v = m + *v * s;
            }
        }
        let recon = model.decode(&Tensor::matrix(c, dz, z)?)?;
        out.extend(
            recon
                .data()
                .chunks(model.data_dim)
                .map(|row| {
                    row.iter()
                        .zip(reference.data())
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<S>()
                        .sqrt()
                        .as_f64()
                }),
        );
        left -= c;
    }
    Ok(out)
}

/// `n` draws of `||Δ(x)||₂ = ||g(mu(x) + eta * sigma(x)) - g(mu(x))||₂`.
pub fn delta_sample<S: Scalar>(model: &VaeModel<S>, x: &Tensor<S>, rng: &mut RngStream, n: usize) -> Result<Vec<f64>> {
    let enc = model.encode(x)?;
    let reference = model.decode(&enc.mu)?;
    reconstruction_distances(model, &enc.mu, &enc.sigma, &reference, rng, n)
}

/// `n` draws of `||Δ(x, delta)||₂`: reconstructions sampled around the
/// encoding of `x + delta`, measured against the clean reference `g(mu(x))`.
pub fn perturbed_delta_sample<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    delta: &Tensor<S>,
    source: SigmaSource,
    rng: &mut RngStream,
    n: usize,
) -> Result<Vec<f64>> {
    let clean = model.encode(x)?;
    let reference = model.decode(&clean.mu)?;
    let pert = model.encode(&x.add(delta))?;
    let sigma = match source {
        SigmaSource::Perturbed => &pert.sigma,
        SigmaSource::Clean => &clean.sigma,
    };
    reconstruction_distances(model, &pert.mu, sigma, &reference, rng, n)
}

/// Fraction of `distances` that are at most `r`.
pub fn inside_fraction(distances: &[f64], r: f64) -> Proportion {
    Proportion::new(distances.iter().filter(|&&d| d <= r).count(), distances.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::Likelihood;

    #[test]
    fn tiny_sigma_gives_near_zero_distances() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1e-12, 1e-12])).unwrap();
        let d = delta_sample(&m, &Tensor::vector_f64(&[0.3, 0.2]), &mut RngStream::new(1, 0), 100).unwrap();
        assert!(d.iter().all(|&v| v < 1e-10));
    }

    #[test]
    fn constant_decoder_gives_zero_distances() {
        let m: VaeModel = VaeModel::linear(
            &Tensor::eye(2),
            &Tensor::zeros(&[2]),
            &Tensor::vector_f64(&[1.0, 1.0]),
            &Tensor::zeros(&[2, 2]),
            &Tensor::vector_f64(&[0.5, 0.5]),
            Likelihood::Gaussian { gamma: 1.0 },
        )
        .unwrap();
        let d = delta_sample(&m, &Tensor::vector_f64(&[1.0, 2.0]), &mut RngStream::new(1, 0), 5000).unwrap();
        assert_eq!(d.len(), 5000);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_normal_median() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1.0])).unwrap();
        let d = delta_sample(&m, &Tensor::vector_f64(&[0.0]), &mut RngStream::new(3, 0), 100_000).unwrap();
        let med = crate::numerics::stats::median(&d);
        assert!((med - 0.674_489_750_196_081_7).abs() < 0.01, "median {med}");
    }
}
