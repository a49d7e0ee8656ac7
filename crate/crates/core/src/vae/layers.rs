use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::numerics::special::softplus;
use crate::numerics::{RngStream, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(S::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    fn record<S: Scalar>(self, g: &mut Graph<S>, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Relu => g.relu(v),
            Activation::Tanh => g.tanh(v),
            Activation::Softplus => g.softplus(v),
        }
    }
}

/// Fully connected layer `act(x W + b)` with `W` stored as `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S = f64> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub activation: Activation,
}

impl<S: Scalar> Dense<S> {
    /// He-uniform weights for ReLU layers, Glorot-uniform otherwise; zero bias.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / inputs.max(1) as f64).sqrt(),
            _ => (6.0 / (inputs + outputs).max(1) as f64).sqrt(),
        };
        let data = (0..inputs * outputs)
            .map(|_| S::lit(limit * (2.0 * rng.uniform() - 1.0)))
            .collect();
        Self {
            weight: Tensor::matrix(inputs, outputs, data).expect("sized"),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    /// Layer computing `act(A x + b)` for a map given as `A: [out, in]`.
    pub fn from_map(a: &Tensor<S>, b: &Tensor<S>, activation: Activation) -> Result<Self> {
        if a.rank() != 2 || b.rank() != 1 || b.len() != a.shape()[0] {
            return Err(Error::shape(format!(
                "layer map {:?} with bias {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(Self {
            weight: a.transpose(),
            bias: b.clone(),
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Pre-activation `x W + b` for a `[batch, in]` input.
    pub fn linear(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.matmul(&self.weight)?.add_row(&self.bias))
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let act = self.activation;
        Ok(self.linear(x)?.map(|v| act.apply(v)))
    }
}

/// Stack of dense layers. An empty stack is the identity map.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Mlp<S = f64> {
    pub layers: Vec<Dense<S>>,
}

impl<S: Scalar> Mlp<S> {
    pub fn new(layers: Vec<Dense<S>>) -> Self {
        Self { layers }
    }

    /// Layers of widths `sizes[0] -> sizes[1] -> ...`; `hidden` on every layer
    /// but the last, which uses `output`.
    pub fn init(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut RngStream) -> Self {
        let n = sizes.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::init(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Pre-activations of every hidden unit for a single input row, used to
    /// measure the distance to the nearest ReLU kink.
    pub fn pre_activations(&self, x: &Tensor<S>) -> Result<Vec<S>> {
        let mut h = x.clone();
        let mut out = Vec::new();
        for layer in &self.layers {
            let pre = layer.linear(&h)?;
            out.extend_from_slice(pre.data());
            let act = layer.activation;
            h = pre.map(|v| act.apply(v));
        }
        Ok(out)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(Dense::outputs)
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Registers the weights on `g`, as leaves when `trainable`, else constants.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (w, b) = if trainable {
                    (g.leaf(l.weight.clone()), g.leaf(l.bias.clone()))
                } else {
                    (g.constant(l.weight.clone()), g.constant(l.bias.clone()))
                };
                (w, b, l.activation)
            })
            .collect();
        BoundMlp { layers }
    }
}

/// An [`Mlp`] whose parameters live on a graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var, Activation)>,
}

impl BoundMlp {
    /// `x` must be a `[batch, in]` matrix.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            let z = g.matmul(h, w)?;
            let z = g.add_bias(z, b)?;
            h = act.record(g, z);
        }
        Ok(h)
    }

    pub fn param_vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_and_plain_forward_agree() {
        let mut rng = RngStream::new(1, 0);
        let mlp: Mlp<f64> = Mlp::init(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let x = Tensor::from_f64(&[2, 3], &[0.1, -0.2, 0.3, 1.0, 0.5, -1.5]).unwrap();
        let plain = mlp.forward(&x).unwrap();
        let mut g = Graph::new();
        let bound = mlp.bind(&mut g, true);
        let xv = g.constant(x);
        let out = bound.forward(&mut g, xv).unwrap();
        for (a, b) in g.value(out).data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(bound.param_vars().len(), mlp.params().len());
    }

    #[test]
    fn from_map_computes_a_x_plus_b() {
        let a = Tensor::<f64>::from_f64(&[1, 1], &[2.0]).unwrap();
        let b = Tensor::vector_f64(&[1.0]);
        let layer = Dense::from_map(&a, &b, Activation::Identity).unwrap();
        let out = layer.forward(&Tensor::from_f64(&[1, 1], &[3.0]).unwrap()).unwrap();
        assert_eq!(out.item(), 7.0);
    }
}
