//! Small dense linear-algebra helpers on rank-2 tensors.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

fn square_dim<S: Scalar>(a: &Tensor<S>) -> Result<usize> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::shape(format!(
            "expected a square matrix, got {:?}",
            a.shape()
        )));
    }
    Ok(a.shape()[0])
}

/// Lower-triangular `L` with `L Lᵀ = a` for symmetric positive-definite `a`.
pub fn cholesky<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    let n = square_dim(a)?;
    let mut l = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > S::zero()) {
                    return Err(Error::domain(format!(
                        "matrix not positive definite (pivot {i} = {s})"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Tensor::matrix(n, n, l)
}

/// `ln |a|` for symmetric positive-definite `a`.
pub fn logdet_spd<S: Scalar>(a: &Tensor<S>) -> Result<S> {
    let l = cholesky(a)?;
    let n = l.shape()[0];
    Ok((0..n).map(|i| l.at(i, i).ln()).sum::<S>() * S::lit(2.0))
}

/// Largest singular value of `a` and its right singular vector, by power
/// iteration on `aᵀa`.
pub fn top_singular<S: Scalar>(a: &Tensor<S>) -> Result<(S, Tensor<S>)> {
    if a.rank() != 2 {
        return Err(Error::shape("top_singular expects a matrix"));
    }
    let cols = a.shape()[1];
    if cols == 0 {
        return Ok((S::zero(), Tensor::zeros(&[0])));
    }
    let ata = a.transpose().matmul(a)?;
    // deterministic, generically non-orthogonal start
    let mut v = Tensor::vector(
        (0..cols)
            .map(|i| S::one() + S::lit(0.1 * (i as f64 + 1.0).sqrt()))
            .collect(),
    );
    v = v.scale(S::one() / v.l2_norm());
    let mut lambda = S::zero();
    for _ in 0..10_000 {
        let w = ata.matmul(&v)?;
        let norm = w.l2_norm();
        if norm == S::zero() {
            return Ok((S::zero(), v));
        }
        let next = w.scale(S::one() / norm);
        let converged = (norm - lambda).abs() <= S::lit(1e-14) * norm;
        lambda = norm;
        v = next;
        if converged {
            break;
        }
    }
    Ok((lambda.sqrt(), v))
}
