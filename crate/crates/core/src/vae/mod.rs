//! Gaussian-encoder VAE: MLP building blocks, the model with its ELBO, Adam
//! training and checkpoints.
//!
//! Every operation has a plain tensor path used by the Monte Carlo
//! estimators, and a graph path ([`VaeModel::bind`]) used wherever gradients
//! are needed. Tests check that both agree.

mod checkpoint;
mod layers;
mod model;
mod train;

pub use checkpoint::{Checkpoint, LayerRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use layers::{Activation, BoundMlp, Dense, Mlp};
pub use model::{kl_divergence, reparam_with_noise, Architecture, BoundVae, Encoding, Likelihood, VaeModel};
pub use train::{train, AdamConfig, TrainConfig, TrainReport};
