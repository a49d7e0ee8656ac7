//! Robustness analysis for Gaussian-encoder variational autoencoders.
//!
//! The crate trains small MLP VAEs, estimates how far reconstructions drift
//! under encoder noise and input perturbations, computes closed-form lower
//! bounds on the input-space robustness margin, and runs maximum-damage
//! attacks. Linear-Gaussian oracles in [`oracles`] provide ground truth.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to the precision used by the experiments.

pub mod attacks;
pub mod autodiff;
mod error;
pub mod numerics;
pub mod oracles;
pub mod robustness;
mod scalar;
pub mod vae;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Vae64 = vae::VaeModel<f64>;
pub type Vae32 = vae::VaeModel<f32>;
