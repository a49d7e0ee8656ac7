use serde::{Deserialize, Serialize};

use super::model::VaeModel;
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, RngStream, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// KL weight of the beta-ELBO.
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            learning_rate: 0.001,
            batch_size: 512,
            epochs: 100,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid Adam moments {a:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean negative beta-ELBO of each epoch, averaged over its minibatches.
    pub loss_trace: Vec<f64>,
    pub steps: usize,
}

struct Adam<S> {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    fn new(shapes: &[&Tensor<S>], lr: f64, cfg: AdamConfig) -> Self {
        let zeros = || shapes.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            cfg,
            lr,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, params: Vec<&mut Tensor<S>>, grads: &[Tensor<S>]) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = S::lit(1.0 - b1.powi(self.t));
        let c2 = S::lit(1.0 - b2.powi(self.t));
        let (b1, b2) = (S::lit(b1), S::lit(b2));
        let (lr, eps) = (S::lit(self.lr), S::lit(self.cfg.epsilon));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((w, &gi), (mi, vi)) in it {
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

fn gather_rows<S: Scalar>(data: &Tensor<S>, idx: &[usize]) -> Tensor<S> {
    let c = data.cols();
    let mut out = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        out.extend_from_slice(data.row(i));
    }
    Tensor::matrix(idx.len(), c, out).expect("row gather")
}

/// Minibatch Adam on the mean negative beta-ELBO with one reparameterised
/// sample per input.
///
/// Each epoch reshuffles the data and draws encoder noise from its own
/// stream derived from `cfg.seed`, so runs are bitwise reproducible. A
/// non-finite loss or gradient aborts with [`Error::Divergence`] carrying the
/// losses of all completed epochs.
pub fn train<S: Scalar>(model: &mut VaeModel<S>, data: &Tensor<S>, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.rank() != 2 || data.rows() == 0 {
        return Err(Error::Config("training data must be a non-empty matrix".into()));
    }
    if data.cols() != model.data_dim {
        return Err(Error::shape(format!(
            "training data has {} columns, model expects {}",
            data.cols(),
            model.data_dim
        )));
    }
    let n = data.rows();
    let mut adam = Adam::new(&model.params(), cfg.learning_rate, cfg.adam);
    let master = RngStream::new(cfg.seed, 0x74_7261_696e);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = master.derive(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = gather_rows(data, chunk);
            let eta = gaussian_sample(&mut rng, &[chunk.len(), model.latent_dim]);
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let xv = g.constant(x);
            let ev = g.constant(eta);
            let loss = bound.negative_elbo(&mut g, xv, ev, cfg.beta)?;
            let value = g.value(loss).item().as_f64();
            let grads = if value.is_finite() {
                let gr = g.backward(loss)?;
                let gs: Vec<Tensor<S>> = bound.param_vars().into_iter().map(|v| gr.wrt(v)).collect();
                gs.iter().all(Tensor::is_finite).then_some(gs)
            } else {
                None
            };
            let Some(grads) = grads else {
                return Err(Error::Divergence {
                    epoch,
                    loss: value,
                    trace,
                });
            };
            adam.step(model.params_mut(), &grads);
            total += value * chunk.len() as f64;
            steps += 1;
        }
        trace.push(total / n as f64);
    }
    Ok(TrainReport {
        loss_trace: trace,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::{Architecture, Likelihood};

    fn toy() -> (VaeModel, Tensor) {
        let mut rng = RngStream::new(11, 0);
        let arch = Architecture {
            data_dim: 2,
            latent_dim: 1,
            hidden: 8,
            hidden_layers: 1,
            activation: crate::vae::Activation::Relu,
        };
        let model = VaeModel::new(arch, Likelihood::Gaussian { gamma: 1.0 }, 0.0, &mut rng).unwrap();
        let data: Tensor = gaussian_sample(&mut rng, &[64, 2]);
        (model, data)
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let (mut model, data) = toy();
        let before = model.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let rep = train(&mut model, &data, &cfg).unwrap();
        assert!(rep.loss_trace.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            seed: 5,
            ..TrainConfig::default()
        };
        let (mut a, data) = toy();
        let mut b = a.clone();
        let ta = train(&mut a, &data, &cfg).unwrap();
        let tb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ta.loss_trace.len(), 3);
        assert!(ta.loss_trace.iter().zip(&tb.loss_trace).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        let (mut model, mut data) = toy();
        data.data_mut()[0] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        match train(&mut model, &data, &cfg) {
            Err(Error::Divergence { epoch, trace, .. }) => {
                assert_eq!(epoch, 0);
                assert!(trace.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let (mut model, data) = toy();
        let cfg = TrainConfig {
            beta: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&mut model, &data, &cfg), Err(Error::Config(_))));
    }
}
