use serde::{Deserialize, Serialize};

use super::layers::{Activation, BoundMlp, Dense, Mlp};
use crate::autodiff::{jacobian, Graph, JacobianMatrix, Var};
use crate::error::{Error, Result};
use crate::numerics::special::{sigmoid, softplus, softplus_inverse};
use crate::numerics::{gaussian_sample, RngStream, Tensor};
use crate::scalar::Scalar;

/// Observation model `p(x|z)` around the decoder output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Likelihood {
    /// Isotropic Gaussian with fixed standard deviation `gamma`.
    Gaussian { gamma: f64 },
    /// Independent Bernoulli pixels; the decoder emits logits.
    Bernoulli,
}

impl Likelihood {
    pub fn name(self) -> &'static str {
        match self {
            Likelihood::Gaussian { .. } => "gaussian",
            Likelihood::Bernoulli => "bernoulli",
        }
    }
}

/// Network widths for [`VaeModel::new`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    /// Hidden layers per network; the first encoder layer is shared by both heads.
    pub hidden_layers: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn desk(data_dim: usize) -> Self {
        Self {
            data_dim,
            latent_dim: 8,
            hidden: 64,
            hidden_layers: 2,
            activation: Activation::Relu,
        }
    }

    pub fn paper(data_dim: usize) -> Self {
        Self {
            data_dim,
            latent_dim: 20,
            hidden: 400,
            hidden_layers: 2,
            activation: Activation::Relu,
        }
    }
}

/// Encoder output for one input (rank-1) or a batch (rank-2).
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding<S = f64> {
    pub mu: Tensor<S>,
    pub sigma: Tensor<S>,
}

/// Gaussian-encoder VAE with diagonal posterior covariance.
///
/// The encoder std is `softplus(sigma_head(h)) + tau` where `h` is the output
/// of the shared trunk, so `sigma >= tau` always holds.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel<S = f64> {
    pub trunk: Mlp<S>,
    pub mu_head: Mlp<S>,
    pub sigma_head: Mlp<S>,
    /// Emits the Gaussian mean directly, or Bernoulli logits.
    pub decoder: Mlp<S>,
    pub tau: S,
    pub likelihood: Likelihood,
    pub data_dim: usize,
    pub latent_dim: usize,
}

fn as_batch<S: Scalar>(x: &Tensor<S>, width: usize, what: &str) -> Result<(Tensor<S>, bool)> {
    match x.rank() {
        1 if x.len() == width => Ok((x.as_row_matrix(), true)),
        2 if x.cols() == width => Ok((x.clone(), false)),
        _ => Err(Error::shape(format!(
            "{what} expects {width} columns, got {:?}",
            x.shape()
        ))),
    }
}

fn unbatch<S: Scalar>(t: Tensor<S>, single: bool) -> Tensor<S> {
    if single {
        let n = t.len();
        t.reshape(&[n]).expect("same size")
    } else {
        t
    }
}

impl<S: Scalar> VaeModel<S> {
    pub fn new(arch: Architecture, likelihood: Likelihood, tau: f64, rng: &mut RngStream) -> Result<Self> {
        if arch.hidden_layers == 0 || arch.latent_dim == 0 || arch.data_dim == 0 {
            return Err(Error::Config(format!("degenerate architecture {arch:?}")));
        }
        check_tau(tau)?;
        let (h, act) = (arch.hidden, arch.activation);
        let trunk = Mlp::init(&[arch.data_dim, h], act, act, rng);
        let mut head = vec![h; arch.hidden_layers];
        head.push(arch.latent_dim);
        let mu_head = Mlp::init(&head, act, Activation::Identity, rng);
        let sigma_head = Mlp::init(&head, act, Activation::Identity, rng);
        let mut dec = vec![arch.latent_dim];
        dec.extend(std::iter::repeat_n(h, arch.hidden_layers));
        dec.push(arch.data_dim);
        let decoder = Mlp::init(&dec, act, Activation::Identity, rng);
        Ok(Self {
            trunk,
            mu_head,
            sigma_head,
            decoder,
            tau: S::lit(tau),
            likelihood,
            data_dim: arch.data_dim,
            latent_dim: arch.latent_dim,
        })
    }

    /// Fully linear model: `mu(x) = W x + c`, constant `sigma`, decoder output
    /// `A z + b`. `sigma` entries must be positive; `tau` is zero.
    pub fn linear(
        encoder: &Tensor<S>,
        encoder_bias: &Tensor<S>,
        sigma: &Tensor<S>,
        decoder: &Tensor<S>,
        decoder_bias: &Tensor<S>,
        likelihood: Likelihood,
    ) -> Result<Self> {
        let (dz, dx) = (encoder.rows(), encoder.cols());
        if sigma.len() != dz || decoder.shape() != [dx, dz] {
            return Err(Error::shape(format!(
                "linear vae: encoder {:?}, sigma {:?}, decoder {:?}",
                encoder.shape(),
                sigma.shape(),
                decoder.shape()
            )));
        }
        if sigma.data().iter().any(|&s| !(s > S::zero())) {
            return Err(Error::domain("linear vae sigma must be positive"));
        }
        let sigma_bias = sigma.map(|s| S::lit(softplus_inverse(s.as_f64())));
        let zero_map = Tensor::zeros(&[dz, dx]);
        Ok(Self {
            trunk: Mlp::default(),
            mu_head: Mlp::new(vec![Dense::from_map(encoder, encoder_bias, Activation::Identity)?]),
            sigma_head: Mlp::new(vec![Dense::from_map(&zero_map, &sigma_bias, Activation::Identity)?]),
            decoder: Mlp::new(vec![Dense::from_map(decoder, decoder_bias, Activation::Identity)?]),
            tau: S::zero(),
            likelihood,
            data_dim: dx,
            latent_dim: dz,
        })
    }

    /// Identity encoder mean and identity decoder in `d` dimensions with
    /// constant encoder std.
    pub fn identity(sigma: &Tensor<S>) -> Result<Self> {
        let d = sigma.len();
        let zeros = Tensor::zeros(&[d]);
        Self::linear(
            &Tensor::eye(d),
            &zeros,
            sigma,
            &Tensor::eye(d),
            &zeros,
            Likelihood::Gaussian { gamma: 1.0 },
        )
    }

    /// Same weights with a different std offset.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self {
            tau: S::lit(tau),
            ..self.clone()
        })
    }

    pub fn encode(&self, x: &Tensor<S>) -> Result<Encoding<S>> {
        let (xb, single) = as_batch(x, self.data_dim, "encode")?;
        let h = self.trunk.forward(&xb)?;
        let mu = self.mu_head.forward(&h)?;
        let tau = self.tau;
        let sigma = self.sigma_head.forward(&h)?.map(|v| softplus(v) + tau);
        if !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::NonFinite("encoder activations".into()));
        }
        if sigma.data().iter().any(|&s| s <= S::zero()) {
            return Err(Error::NonFinite("encoder std underflowed to zero".into()));
        }
        Ok(Encoding {
            mu: unbatch(mu, single),
            sigma: unbatch(sigma, single),
        })
    }

    pub fn encode_mu(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (xb, single) = as_batch(x, self.data_dim, "encode")?;
        let mu = self.mu_head.forward(&self.trunk.forward(&xb)?)?;
        if !mu.is_finite() {
            return Err(Error::NonFinite("encoder activations".into()));
        }
        Ok(unbatch(mu, single))
    }

    /// Raw decoder output: Gaussian mean or Bernoulli logits.
    pub fn decoder_output(&self, z: &Tensor<S>) -> Result<Tensor<S>> {
        let (zb, single) = as_batch(z, self.latent_dim, "decode")?;
        let out = self.decoder.forward(&zb)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("decoder activations".into()));
        }
        Ok(unbatch(out, single))
    }

    /// Reconstruction mean `E[x|z]`.
    pub fn decode(&self, z: &Tensor<S>) -> Result<Tensor<S>> {
        let out = self.decoder_output(z)?;
        Ok(match self.likelihood {
            Likelihood::Gaussian { .. } => out,
            Likelihood::Bernoulli => out.map(sigmoid),
        })
    }

    /// `z = mu + eta * sigma` with `eta` drawn from `rng`.
    pub fn reparam_sample(&self, mu: &Tensor<S>, sigma: &Tensor<S>, rng: &mut RngStream) -> Result<Tensor<S>> {
        let eta = gaussian_sample(rng, mu.shape());
        reparam_with_noise(mu, sigma, &eta)
    }

    /// `log p(x|z)` for a single input and latent.
    pub fn log_likelihood(&self, x: &Tensor<S>, z: &Tensor<S>) -> Result<S> {
        if z.rank() != 1 {
            return Err(Error::shape("log_likelihood takes a single latent vector"));
        }
        Ok(self.log_likelihood_rows(x, z)?[0])
    }

    /// `log p(x|z_i)` for one input `x` and every row `z_i` of `z`.
    pub fn log_likelihood_rows(&self, x: &Tensor<S>, z: &Tensor<S>) -> Result<Vec<S>> {
        if x.len() != self.data_dim {
            return Err(Error::shape(format!(
                "log_likelihood expects {} entries, got {:?}",
                self.data_dim,
                x.shape()
            )));
        }
        self.check_support(x)?;
        let out = self.decoder_output(z)?.as_row_matrix();
        let d = self.data_dim;
        Ok(out
            .data()
            .chunks(d)
            .map(|row| row_log_likelihood(self.likelihood, x.data(), row))
            .collect())
    }

    fn check_support(&self, x: &Tensor<S>) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::domain("observation is not finite"));
        }
        if self.likelihood == Likelihood::Bernoulli
            && x.data().iter().any(|&v| v < S::zero() || v > S::one())
        {
            return Err(Error::domain("bernoulli observations must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Monte Carlo estimate of `E_q[log p(x|z)] - beta * KL(q(z|x) || N(0, I))`.
    pub fn elbo(&self, x: &Tensor<S>, beta: f64, rng: &mut RngStream, n_mc: usize) -> Result<S> {
        if n_mc == 0 {
            return Err(Error::domain("elbo needs at least one sample"));
        }
        let enc = self.encode(x)?;
        let (mu, sigma) = (&enc.mu, &enc.sigma);
        let eta: Tensor<S> = gaussian_sample(rng, &[n_mc, self.latent_dim]);
        let z = Tensor::matrix(
            n_mc,
            self.latent_dim,
            eta.data()
                .chunks(self.latent_dim)
                .flat_map(|e| {
                    e.iter()
                        .zip(mu.data().iter().zip(sigma.data()))
                        .map(|(&e, (&m, &s))| m + e * s)
                })
                .collect(),
        )?;
        let ll = self.log_likelihood_rows(x, &z)?;
        let recon = ll.iter().copied().sum::<S>() / S::lit(n_mc as f64);
        Ok(recon - S::lit(beta) * kl_divergence(mu, sigma))
    }

    /// `J[i, j] = ∂mu_i / ∂x_j` at a single input.
    pub fn mu_jacobian(&self, x: &Tensor<S>) -> Result<JacobianMatrix<S>> {
        as_batch(x, self.data_dim, "mu_jacobian")?;
        jacobian(
            |g, xv| {
                let b = self.bind(g, false);
                let row = g.broadcast_rows(xv, 1)?;
                b.encode_mu(g, row)
            },
            &x.reshape(&[x.len()])?,
        )
    }

    /// `J[i, j] = ∂g_i / ∂z_j` of the reconstruction mean at a single latent.
    pub fn decoder_jacobian(&self, z: &Tensor<S>) -> Result<JacobianMatrix<S>> {
        as_batch(z, self.latent_dim, "decoder_jacobian")?;
        jacobian(
            |g, zv| {
                let b = self.bind(g, false);
                let row = g.broadcast_rows(zv, 1)?;
                b.decode(g, row)
            },
            &z.reshape(&[z.len()])?,
        )
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        let mut p = self.trunk.params();
        p.extend(self.mu_head.params());
        p.extend(self.sigma_head.params());
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut p = self.trunk.params_mut();
        p.extend(self.mu_head.params_mut());
        p.extend(self.sigma_head.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Whether every hidden activation is piecewise linear.
    pub fn is_piecewise_linear(&self) -> bool {
        [&self.trunk, &self.mu_head, &self.sigma_head, &self.decoder]
            .iter()
            .flat_map(|m| &m.layers)
            .all(|l| matches!(l.activation, Activation::Relu | Activation::Identity))
    }

    /// Records the model on `g`; parameters become leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> BoundVae<S> {
        BoundVae {
            trunk: self.trunk.bind(g, trainable),
            mu_head: self.mu_head.bind(g, trainable),
            sigma_head: self.sigma_head.bind(g, trainable),
            decoder: self.decoder.bind(g, trainable),
            tau: self.tau,
            likelihood: self.likelihood,
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!("tau must be a finite non-negative number, got {tau}")));
    }
    Ok(())
}

fn row_log_likelihood<S: Scalar>(lik: Likelihood, x: &[S], out: &[S]) -> S {
    match lik {
        Likelihood::Gaussian { gamma } => {
            let g = S::lit(gamma);
            let norm = S::lit(-0.5 * (2.0 * std::f64::consts::PI * gamma * gamma).ln());
            x.iter()
                .zip(out)
                .map(|(&a, &m)| {
                    let r = (a - m) / g;
                    norm - S::lit(0.5) * r * r
                })
                .sum()
        }
        Likelihood::Bernoulli => x.iter().zip(out).map(|(&a, &l)| a * l - softplus(l)).sum(),
    }
}

/// `mu + eta * sigma`, elementwise.
pub fn reparam_with_noise<S: Scalar>(mu: &Tensor<S>, sigma: &Tensor<S>, eta: &Tensor<S>) -> Result<Tensor<S>> {
    if mu.shape() != sigma.shape() || mu.shape() != eta.shape() {
        return Err(Error::shape(format!(
            "reparameterisation shapes {:?}, {:?}, {:?}",
            mu.shape(),
            sigma.shape(),
            eta.shape()
        )));
    }
    Ok(mu.add(&eta.mul(sigma)))
}

/// `KL(N(mu, diag sigma^2) || N(0, I))` in closed form.
pub fn kl_divergence<S: Scalar>(mu: &Tensor<S>, sigma: &Tensor<S>) -> S {
    let half = S::lit(0.5);
    mu.data()
        .iter()
        .zip(sigma.data())
        .map(|(&m, &s)| half * (m * m + s * s - S::one() - S::lit(2.0) * s.ln()))
        .sum()
}

/// A [`VaeModel`] recorded on a graph. All inputs are `[batch, dim]` matrices.
#[derive(Clone, Debug)]
pub struct BoundVae<S = f64> {
    trunk: BoundMlp,
    mu_head: BoundMlp,
    sigma_head: BoundMlp,
    decoder: BoundMlp,
    tau: S,
    likelihood: Likelihood,
}

impl<S: Scalar> BoundVae<S> {
    /// Parameter variables in the order of [`VaeModel::params`].
    pub fn param_vars(&self) -> Vec<Var> {
        let mut p = self.trunk.param_vars();
        p.extend(self.mu_head.param_vars());
        p.extend(self.sigma_head.param_vars());
        p.extend(self.decoder.param_vars());
        p
    }

    pub fn encode(&self, g: &mut Graph<S>, x: Var) -> Result<(Var, Var)> {
        let h = self.trunk.forward(g, x)?;
        let mu = self.mu_head.forward(g, h)?;
        let s = self.sigma_head.forward(g, h)?;
        let s = g.softplus(s);
        let sigma = g.add_scalar(s, self.tau);
        Ok((mu, sigma))
    }

    pub fn encode_mu(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let h = self.trunk.forward(g, x)?;
        self.mu_head.forward(g, h)
    }

    pub fn encode_sigma(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let h = self.trunk.forward(g, x)?;
        let s = self.sigma_head.forward(g, h)?;
        let s = g.softplus(s);
        Ok(g.add_scalar(s, self.tau))
    }

    pub fn decoder_output(&self, g: &mut Graph<S>, z: Var) -> Result<Var> {
        self.decoder.forward(g, z)
    }

    pub fn decode(&self, g: &mut Graph<S>, z: Var) -> Result<Var> {
        let out = self.decoder.forward(g, z)?;
        Ok(match self.likelihood {
            Likelihood::Gaussian { .. } => out,
            Likelihood::Bernoulli => g.sigmoid(out),
        })
    }

    /// Per-row `log p(x_i | out_i)` from raw decoder output.
    pub fn log_likelihood_rows(&self, g: &mut Graph<S>, x: Var, out: Var) -> Result<Var> {
        match self.likelihood {
            Likelihood::Gaussian { gamma } => {
                let d = g.value(x).cols() as f64;
                let r = g.sub(x, out)?;
                let r2 = g.square(r);
                let s = g.row_sum(r2);
                let s = g.scale(s, S::lit(-0.5 / (gamma * gamma)));
                Ok(g.add_scalar(s, S::lit(-0.5 * d * (2.0 * std::f64::consts::PI * gamma * gamma).ln())))
            }
            Likelihood::Bernoulli => {
                let xl = g.mul(x, out)?;
                let sp = g.softplus(out);
                let t = g.sub(xl, sp)?;
                Ok(g.row_sum(t))
            }
        }
    }

    /// Per-row closed-form KL to the standard normal prior.
    pub fn kl_rows(&self, g: &mut Graph<S>, mu: Var, sigma: Var) -> Result<Var> {
        let m2 = g.square(mu);
        let s2 = g.square(sigma);
        let ls = g.log(sigma);
        let ls2 = g.scale(ls, S::lit(2.0));
        let a = g.add(m2, s2)?;
        let a = g.sub(a, ls2)?;
        let a = g.add_scalar(a, -S::one());
        let k = g.row_sum(a);
        Ok(g.scale(k, S::lit(0.5)))
    }

    /// Mean negative beta-ELBO over the rows of `x` with fixed noise `eta`.
    pub fn negative_elbo(&self, g: &mut Graph<S>, x: Var, eta: Var, beta: f64) -> Result<Var> {
        let rows = g.value(x).rows();
        let (mu, sigma) = self.encode(g, x)?;
        let es = g.mul(eta, sigma)?;
        let z = g.add(mu, es)?;
        let out = self.decoder.forward(g, z)?;
        let ll = self.log_likelihood_rows(g, x, out)?;
        let kl = self.kl_rows(g, mu, sigma)?;
        let bkl = g.scale(kl, S::lit(beta));
        let per = g.sub(bkl, ll)?;
        let total = g.sum(per);
        Ok(g.scale(total, S::lit(1.0 / rows.max(1) as f64)))
    }
}
