//! Self-describing JSON container for trained models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{Activation, Dense, Mlp};
use super::model::{Likelihood, VaeModel};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "vaerobust-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Row-major `[inputs, outputs]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub data_dim: usize,
    pub latent_dim: usize,
    pub tau: f64,
    pub likelihood: Likelihood,
    pub trunk: Vec<LayerRecord>,
    pub mu_head: Vec<LayerRecord>,
    pub sigma_head: Vec<LayerRecord>,
    pub decoder: Vec<LayerRecord>,
    pub train_config: Option<TrainConfig>,
}

fn records<S: Scalar>(mlp: &Mlp<S>) -> Vec<LayerRecord> {
    mlp.layers
        .iter()
        .map(|l| LayerRecord {
            inputs: l.inputs(),
            outputs: l.outputs(),
            activation: l.activation,
            weight: l.weight.to_f64_vec(),
            bias: l.bias.to_f64_vec(),
        })
        .collect()
}

fn rebuild<S: Scalar>(recs: &[LayerRecord], name: &str) -> Result<Mlp<S>> {
    let mut layers = Vec::with_capacity(recs.len());
    for (i, r) in recs.iter().enumerate() {
        if r.weight.len() != r.inputs * r.outputs || r.bias.len() != r.outputs {
            return Err(Error::Config(format!(
                "checkpoint layer {name}[{i}] declares {}x{} but stores {} weights and {} biases",
                r.inputs,
                r.outputs,
                r.weight.len(),
                r.bias.len()
            )));
        }
        if let Some(prev) = layers.last().map(Dense::<S>::outputs) {
            if prev != r.inputs {
                return Err(Error::Config(format!("checkpoint layer {name}[{i}] does not chain")));
            }
        }
        layers.push(Dense {
            weight: Tensor::from_f64(&[r.inputs, r.outputs], &r.weight)?,
            bias: Tensor::from_f64(&[r.outputs], &r.bias)?,
            activation: r.activation,
        });
    }
    Ok(Mlp::new(layers))
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(model: &VaeModel<S>, train_config: Option<&TrainConfig>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            data_dim: model.data_dim,
            latent_dim: model.latent_dim,
            tau: model.tau.as_f64(),
            likelihood: model.likelihood,
            trunk: records(&model.trunk),
            mu_head: records(&model.mu_head),
            sigma_head: records(&model.sigma_head),
            decoder: records(&model.decoder),
            train_config: train_config.copied(),
        }
    }

    pub fn to_model<S: Scalar>(&self) -> Result<VaeModel<S>> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let model = VaeModel {
            trunk: rebuild(&self.trunk, "trunk")?,
            mu_head: rebuild(&self.mu_head, "mu_head")?,
            sigma_head: rebuild(&self.sigma_head, "sigma_head")?,
            decoder: rebuild(&self.decoder, "decoder")?,
            tau: S::lit(self.tau),
            likelihood: self.likelihood,
            data_dim: self.data_dim,
            latent_dim: self.latent_dim,
        };
        let trunk_out = model.trunk.output_dim().unwrap_or(self.data_dim);
        let ok = model.mu_head.output_dim() == Some(self.latent_dim)
            && model.sigma_head.output_dim() == Some(self.latent_dim)
            && model.decoder.output_dim() == Some(self.data_dim)
            && model.trunk.layers.first().is_none_or(|l| l.inputs() == self.data_dim)
            && model.mu_head.layers[0].inputs() == trunk_out
            && model.sigma_head.layers[0].inputs() == trunk_out
            && model.decoder.layers[0].inputs() == self.latent_dim;
        if !ok {
            return Err(Error::Config("checkpoint network shapes are inconsistent".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::vae::Architecture;

    #[test]
    fn round_trip_preserves_model() {
        let mut rng = RngStream::new(2, 0);
        let m: VaeModel = VaeModel::new(Architecture::desk(5), Likelihood::Bernoulli, 0.5, &mut rng).unwrap();
        let cfg = TrainConfig::default();
        let ck = Checkpoint::from_model(&m, Some(&cfg));
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model::<f64>().unwrap(), m);
        assert_eq!(back.train_config, Some(cfg));
    }

    #[test]
    fn wrong_tag_or_shape_rejected() {
        let m: VaeModel = VaeModel::identity(&Tensor::vector_f64(&[1.0])).unwrap();
        let mut ck = Checkpoint::from_model(&m, None);
        ck.format = "other".into();
        assert!(ck.to_model::<f64>().is_err());
        let mut ck = Checkpoint::from_model(&m, None);
        ck.decoder[0].weight.push(1.0);
        assert!(ck.to_model::<f64>().is_err());
    }
}
