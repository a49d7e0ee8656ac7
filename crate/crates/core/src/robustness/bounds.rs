use serde::{Deserialize, Serialize};

use super::sampling::{delta_sample, inside_fraction};
use crate::error::{Error, Result};
use crate::numerics::linalg::{logdet_spd, top_singular};
use crate::numerics::stats::Proportion;
use crate::numerics::{probit, RngStream, Tensor};
use crate::scalar::Scalar;
use crate::vae::{Likelihood, VaeModel};

/// Relative first-order mismatch above which a bound is reported as outside
/// the locally linear regime.
pub const TRUST_REGION_TOLERANCE: f64 = 0.1;

/// Trace radius `sqrt(2 Tr(J diag(sigma²) Jᵀ))`, with the decoder Jacobian
/// `J` taken at `mu(x)`. Higher order terms are dropped.
///
/// By Markov's inequality on `||Δ||²`, any `r` at or above this radius has
/// `p(||Δ(x)||₂ <= r) >= 1/2` under the linearised decoder. The converse does
/// not hold: the smallest robust radius is usually well below it.
pub fn min_r_bound<S: Scalar>(model: &VaeModel<S>, x: &Tensor<S>) -> Result<f64> {
    let enc = model.encode(x)?;
    let j = model.decoder_jacobian(&enc.mu)?;
    Ok(min_r_bound_from(j.as_tensor(), &enc.sigma))
}

/// [`min_r_bound`] from an explicit decoder Jacobian `[d_X, d_Z]` and std.
pub fn min_r_bound_from<S: Scalar>(decoder_jacobian: &Tensor<S>, sigma: &Tensor<S>) -> f64 {
    let dz = sigma.len();
    let trace: f64 = decoder_jacobian
        .data()
        .chunks(dz)
        .flat_map(|row| {
            row.iter()
                .zip(sigma.data())
                .map(|(&j, &s)| (j * s).as_f64().powi(2))
        })
        .sum();
    (2.0 * trace).sqrt()
}

/// `min_sigma * probit(p) / jac_norm`, zero when `p <= 0.5` and infinite for
/// a flat encoder.
pub fn margin_bound_formula(p: f64, min_sigma: f64, jac_norm: f64) -> Result<f64> {
    if p <= 0.5 {
        return Ok(0.0);
    }
    if jac_norm == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(min_sigma * probit(p)? / jac_norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginBound {
    pub bound: f64,
    pub p_inside: Proportion,
    /// Probability fed to the probit: the estimate, pulled in from 1 by half a
    /// count when every draw landed inside.
    pub p_used: f64,
    pub min_sigma: f64,
    pub jac_norm: f64,
    /// `||J^mu||_F = 0`: the bound is infinite.
    pub flat_encoder: bool,
    /// Worst relative error of the first-order encoder model at the bound radius.
    pub trust_mismatch: f64,
    pub outside_trust_region: bool,
}

/// Lower bound on the input-space margin from the encoder-mean Jacobian, the
/// smallest encoder std and a Monte Carlo estimate of `p(||Δ(x)||₂ <= r)`.
pub fn margin_bound<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    r: f64,
    rng: &mut RngStream,
    samples: usize,
) -> Result<MarginBound> {
    if !(r > 0.0) {
        return Err(Error::domain(format!("r must be positive, got {r}")));
    }
    if samples == 0 {
        return Err(Error::domain("margin_bound needs at least one sample"));
    }
    let p_inside = inside_fraction(&delta_sample(model, x, rng, samples)?, r);
    let enc = model.encode(x)?;
    let min_sigma = enc.sigma.min().as_f64();
    let jac = model.mu_jacobian(x)?;
    let jac_norm = jac.frobenius_norm().as_f64();
    let p_used = if p_inside.successes == p_inside.trials {
        1.0 - 0.5 / samples as f64
    } else {
        p_inside.estimate
    };
    let bound = margin_bound_formula(p_used, min_sigma, jac_norm)?;
    let trust_mismatch = if bound > 0.0 && bound.is_finite() {
        linearisation_mismatch(model, x, jac.as_tensor(), bound)?
    } else {
        0.0
    };
    Ok(MarginBound {
        bound,
        p_inside,
        p_used,
        min_sigma,
        jac_norm,
        flat_encoder: jac_norm == 0.0,
        trust_mismatch,
        outside_trust_region: trust_mismatch > TRUST_REGION_TOLERANCE,
    })
}

/// `max ||mu(x + d) - mu(x) - J d|| / ||J d||` over `d = ±radius * v`, with
/// `v` the top right-singular vector of `J`.
pub fn linearisation_mismatch<S: Scalar>(model: &VaeModel<S>, x: &Tensor<S>, jac: &Tensor<S>, radius: f64) -> Result<f64> {
    let (_, v) = top_singular(jac)?;
    let mu0 = model.encode_mu(x)?;
    let mut worst = 0.0f64;
    for sign in [1.0, -1.0] {
        let d = v.scale(S::lit(sign * radius));
        let lin = jac.matmul(&d)?;
        let actual = model.encode_mu(&x.add(&d))?.sub(&mu0);
        let denom = lin.l2_norm().as_f64();
        if denom > 0.0 {
            worst = worst.max(actual.sub(&lin).l2_norm().as_f64() / denom);
        }
    }
    Ok(worst)
}

/// Second-order approximation of the beta-VAE objective around `mu(x)`:
/// `½||x - g(mu)||² + (β/2)||J^mu x||² + (β/2) log|I + J_g J_gᵀ / β|`.
/// A diagnostic for Gaussian-likelihood models.
pub fn surrogate_objective<S: Scalar>(model: &VaeModel<S>, x: &Tensor<S>, beta: f64) -> Result<f64> {
    if !matches!(model.likelihood, Likelihood::Gaussian { .. }) {
        return Err(Error::domain("surrogate objective needs a Gaussian likelihood"));
    }
    if !(beta > 0.0) {
        return Err(Error::domain(format!("beta must be positive, got {beta}")));
    }
    let x64: Tensor<f64> = x.cast();
    let mu = model.encode_mu(x)?;
    let recon: Tensor<f64> = model.decode(&mu)?.cast();
    let fit = 0.5 * x64.sub(&recon).l2_norm().powi(2);
    let jmu: Tensor<f64> = model.mu_jacobian(x)?.as_tensor().cast();
    let smooth = 0.5 * beta * jmu.matmul(&x64)?.l2_norm().powi(2);
    let jg: Tensor<f64> = model.decoder_jacobian(&mu)?.as_tensor().cast();
    // |I + J Jᵀ/β| over d_X equals |I + Jᵀ J/β| over d_Z.
    let gram = jg.transpose().matmul(&jg)?.scale(1.0 / beta).add(&Tensor::eye(jg.cols()));
    let logdet = logdet_spd(&gram)?;
    Ok(fit + smooth + 0.5 * beta * logdet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_r_bound_examples() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1.0, 1.0])).unwrap();
        let b = min_r_bound(&m, &Tensor::vector_f64(&[0.2, -0.3])).unwrap();
        assert!((b - 2.0).abs() < 1e-12);

        let a = Tensor::<f64>::from_f64(&[2, 2], &[2.0, 0.0, 0.0, 1.0]).unwrap();
        let lin = VaeModel::linear(
            &Tensor::eye(2),
            &Tensor::zeros(&[2]),
            &Tensor::vector_f64(&[1.0, 1.0]),
            &a,
            &Tensor::zeros(&[2]),
            Likelihood::Gaussian { gamma: 1.0 },
        )
        .unwrap();
        let b = min_r_bound(&lin, &Tensor::vector_f64(&[0.0, 0.0])).unwrap();
        assert!((b - 10f64.sqrt()).abs() < 1e-12);
        assert_eq!(min_r_bound_from(&a, &Tensor::zeros(&[2])), 0.0);
    }

    #[test]
    fn formula_cases() {
        assert_eq!(margin_bound_formula(0.5, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(margin_bound_formula(0.3, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(margin_bound_formula(0.8, 1.0, 0.0).unwrap(), f64::INFINITY);
        let one = margin_bound_formula(0.841_344_746_068_542_9, 1.0, 2f64.sqrt()).unwrap();
        assert!((one - 1.0 / 2f64.sqrt()).abs() < 1e-9);
        let two = margin_bound_formula(0.841_344_746_068_542_9, 2.0, 2f64.sqrt()).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn identity_model_bound_matches_oracle() {
        // chi with 2 degrees of freedom: P(||eta|| <= r) = 1 - exp(-r²/2)
        let p = 0.841_344_746_068_542_9f64;
        let r = (-2.0 * (1.0 - p).ln()).sqrt();
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1.0, 1.0])).unwrap();
        let mb = margin_bound(&m, &Tensor::vector_f64(&[0.0, 0.0]), r, &mut RngStream::new(8, 0), 200_000).unwrap();
        assert!((mb.jac_norm - 2f64.sqrt()).abs() < 1e-12);
        assert!((mb.bound - 1.0 / 2f64.sqrt()).abs() < 0.01, "{}", mb.bound);
        assert!(!mb.outside_trust_region);
    }

    #[test]
    fn low_probability_gives_zero_bound() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1.0, 1.0])).unwrap();
        let mb = margin_bound(&m, &Tensor::vector_f64(&[0.0, 0.0]), 0.1, &mut RngStream::new(1, 0), 1000).unwrap();
        assert_eq!(mb.bound, 0.0);
    }

    #[test]
    fn surrogate_examples() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1.0])).unwrap();
        let v = surrogate_objective(&m, &Tensor::vector_f64(&[1.0]), 1.0).unwrap();
        assert!((v - (0.5 + 0.5 * 2f64.ln())).abs() < 1e-12);
        let v0 = surrogate_objective(&m, &Tensor::vector_f64(&[0.0]), 3.0).unwrap();
        assert!((v0 - 1.5 * (1.0f64 + 1.0 / 3.0).ln()).abs() < 1e-12);
        // large beta: (β/2) log(1 + s/β) -> s/2 - s²/(4β)
        let big = 1e6;
        let vb = surrogate_objective(&m, &Tensor::vector_f64(&[0.0]), big).unwrap();
        assert!((vb - (0.5 - 0.25 / big)).abs() < 1e-9);
    }
}
