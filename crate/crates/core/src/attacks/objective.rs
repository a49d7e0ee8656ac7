use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::vae::VaeModel;

/// Which encoder outputs see the perturbed input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTarget {
    MuOnly,
    SigmaOnly,
    Both,
}

impl AttackTarget {
    pub const ALL: [AttackTarget; 3] = [AttackTarget::MuOnly, AttackTarget::SigmaOnly, AttackTarget::Both];

    pub fn name(self) -> &'static str {
        match self {
            AttackTarget::MuOnly => "mu_only",
            AttackTarget::SigmaOnly => "sigma_only",
            AttackTarget::Both => "both",
        }
    }
}

impl std::str::FromStr for AttackTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu_only" => Ok(AttackTarget::MuOnly),
            "sigma_only" => Ok(AttackTarget::SigmaOnly),
            "both" => Ok(AttackTarget::Both),
            other => Err(Error::Config(format!("unknown attack target {other:?}"))),
        }
    }
}

/// Value and gradient of the damage objective
/// `mean_k ||g(mu~ + eta_k * sigma~) - g(mu(x))||₂` with respect to `delta`,
/// for a fixed noise batch `eta: [n, d_Z]`.
pub fn damage_and_gradient<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    delta: &Tensor<S>,
    target: AttackTarget,
    eta: &Tensor<S>,
) -> Result<(S, Tensor<S>)> {
    let clean = model.encode(x)?;
    let reference = model.decode(&clean.mu)?;
    let n = eta.rows();
    let mut g = Graph::new();
    let d = g.leaf(delta.clone());
    let loss = record_damage(model, &mut g, x, d, target, eta, &clean.mu, &clean.sigma, &reference, n)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("attack objective".into()));
    }
    let grad = g.backward(loss)?.wrt(d);
    Ok((value, grad))
}

/// Objective value only, without building a graph.
pub fn damage<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    delta: &Tensor<S>,
    target: AttackTarget,
    eta: &Tensor<S>,
) -> Result<S> {
    let clean = model.encode(x)?;
    let reference = model.decode(&clean.mu)?;
    let pert = model.encode(&x.add(delta))?;
    let (mu, sigma) = match target {
        AttackTarget::MuOnly => (&pert.mu, &clean.sigma),
        AttackTarget::SigmaOnly => (&clean.mu, &pert.sigma),
        AttackTarget::Both => (&pert.mu, &pert.sigma),
    };
    let dz = model.latent_dim;
    let mut z = eta.data().to_vec();
    for row in z.chunks_mut(dz) {
        for ((v, &m), &s) in row.iter_mut().zip(mu.data()).zip(sigma.data()) {
            *v = m + *v * s;
        }
    }
    let recon = model.decode(&Tensor::matrix(eta.rows(), dz, z)?)?;
    let total: S = recon
        .data()
        .chunks(model.data_dim)
        .map(|row| {
            row.iter()
                .zip(reference.data())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<S>()
                .sqrt()
        })
        .sum();
    let v = total / S::lit(eta.rows() as f64);
    if !v.is_finite() {
        return Err(Error::NonFinite("attack objective".into()));
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn record_damage<S: Scalar>(
    model: &VaeModel<S>,
    g: &mut Graph<S>,
    x: &Tensor<S>,
    delta: Var,
    target: AttackTarget,
    eta: &Tensor<S>,
    clean_mu: &Tensor<S>,
    clean_sigma: &Tensor<S>,
    reference: &Tensor<S>,
    n: usize,
) -> Result<Var> {
    let bound = model.bind(g, false);
    let xv = g.constant(x.clone());
    let xp = g.add(xv, delta)?;
    let xp = g.broadcast_rows(xp, 1)?;
    let (mu_p, sigma_p) = bound.encode(g, xp)?;
    let ones = g.constant(Tensor::ones(&[n, 1]));
    let mu = match target {
        AttackTarget::SigmaOnly => g.constant(tile(clean_mu, n)),
        _ => g.matmul(ones, mu_p)?,
    };
    let sigma = match target {
        AttackTarget::MuOnly => g.constant(tile(clean_sigma, n)),
        _ => g.matmul(ones, sigma_p)?,
    };
    let ev = g.constant(eta.clone());
    let noise = g.mul(ev, sigma)?;
    let z = g.add(mu, noise)?;
    let recon = bound.decode(g, z)?;
    let rv = g.constant(tile(reference, n));
    let diff = g.sub(recon, rv)?;
    let norms = g.l2_norm(diff);
    let total = g.sum(norms);
    Ok(g.scale(total, S::lit(1.0 / n as f64)))
}

fn tile<S: Scalar>(v: &Tensor<S>, n: usize) -> Tensor<S> {
    let data = (0..n).flat_map(|_| v.data().iter().copied()).collect();
    Tensor::matrix(n, v.len(), data).expect("tile")
}
