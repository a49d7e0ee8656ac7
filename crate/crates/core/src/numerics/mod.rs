//! Dense tensors, seeded random streams and scalar special functions.

pub mod linalg;
pub mod rng;
pub mod special;
pub mod stats;
mod tensor;

pub use rng::{gaussian_sample, RngStream};
pub use special::{normal_cdf, probit};
pub use tensor::{l2_project, Tensor};
