use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Dense Jacobian `J[i, j] = ∂out_i / ∂in_j` of a vector map.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMatrix<S = f64> {
    matrix: Tensor<S>,
}

impl<S: Scalar> JacobianMatrix<S> {
    pub fn rows(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.matrix.at(i, j)
    }

    pub fn frobenius_norm(&self) -> S {
        self.matrix.frobenius_norm()
    }

    pub fn as_tensor(&self) -> &Tensor<S> {
        &self.matrix
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.matrix
    }
}

/// Jacobian of `f` at `at`, one reverse sweep per output coordinate.
///
/// `f` records its computation on the supplied graph, starting from the
/// rank-1 input variable, and returns a rank-1 output variable.
pub fn jacobian<S, F>(f: F, at: &Tensor<S>) -> Result<JacobianMatrix<S>>
where
    S: Scalar,
    F: FnOnce(&mut Graph<S>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(at.clone());
    let y = f(&mut g, x)?;
    let out = g.value(y);
    if !out.is_finite() {
        return Err(Error::NonFinite("jacobian output".into()));
    }
    let (m, n) = (out.len(), at.len());
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let mut seed = Tensor::zeros(out.shape());
        seed.data_mut()[i] = S::one();
        let grads = g.backward_with_seed(y, seed)?;
        data.extend_from_slice(grads.wrt(x).data());
    }
    let matrix = Tensor::matrix(m, n, data)?;
    if !matrix.is_finite() {
        return Err(Error::NonFinite("jacobian entries".into()));
    }
    Ok(JacobianMatrix { matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_sample, RngStream};

    #[test]
    fn linear_map_jacobian_is_the_matrix() {
        let w = Tensor::<f64>::from_f64(&[2, 3], &[1., -2., 0.5, 3., 0., 7.]).unwrap();
        let wc = w.clone();
        let j = jacobian(
            move |g, x| {
                let wv = g.constant(wc);
                g.matmul(wv, x)
            },
            &Tensor::vector_f64(&[0.3, -1.0, 2.0]),
        )
        .unwrap();
        assert_eq!(j.as_tensor(), &w);
    }

    #[test]
    fn identity_jacobian() {
        let j = jacobian(|_, x| Ok(x), &Tensor::<f64>::vector_f64(&[1., 2., 3.])).unwrap();
        assert_eq!(j.as_tensor(), &Tensor::eye(3));
    }

    #[test]
    fn composition_of_linear_maps_multiplies_jacobians() {
        let mut rng = RngStream::new(2, 0);
        let a: Tensor = gaussian_sample(&mut rng, &[3, 4]);
        let b: Tensor = gaussian_sample(&mut rng, &[4, 2]);
        let at = Tensor::vector_f64(&[0.1, 0.2]);
        let (ac, bc) = (a.clone(), b.clone());
        let j = jacobian(
            move |g, x| {
                let bv = g.constant(bc);
                let h = g.matmul(bv, x)?;
                let av = g.constant(ac);
                g.matmul(av, h)
            },
            &at,
        )
        .unwrap();
        assert_eq!(j.as_tensor(), &a.matmul(&b).unwrap());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let r = jacobian(|g, x| Ok(g.log(x)), &Tensor::<f64>::vector_f64(&[-1.0]));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
