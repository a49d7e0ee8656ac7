use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major n-dimensional array.
///
/// Rank-0 tensors (shape `[]`) hold exactly one value and are what scalar
/// reductions produce.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct Tensor<S = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: fmt::Debug> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Rank-1 tensor owning `data`.
    pub fn vector(data: Vec<S>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| S::lit(v)).collect())
    }

    pub fn vector_f64(data: &[f64]) -> Self {
        Self::vector(data.iter().map(|&v| S::lit(v)).collect())
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a `[rows.len(), width]` matrix.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), width], data)
    }

    pub fn eye(d: usize) -> Self {
        let mut t = Self::zeros(&[d, d]);
        for i in 0..d {
            t.data[i * d + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Number of rows when viewed as a matrix; rank-1 tensors count as one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Length of the trailing axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols() + j]
    }

    pub fn item(&self) -> S {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    /// Views a rank-1 tensor as a `[1, n]` row matrix; other ranks are returned as is.
    pub fn as_row_matrix(&self) -> Self {
        if self.rank() == 1 {
            Self {
                shape: vec![1, self.data.len()],
                data: self.data.clone(),
            }
        } else {
            self.clone()
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> S {
        assert_eq!(self.len(), other.len(), "dot length mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn l2_norm(&self) -> S {
        self.data.iter().map(|&v| v * v).sum::<S>().sqrt()
    }

    /// Square root of the sum of squared entries of a matrix.
    pub fn frobenius_norm(&self) -> S {
        debug_assert_eq!(self.rank(), 2, "frobenius norm expects a matrix");
        self.l2_norm()
    }

    pub fn min(&self) -> S {
        self.data.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn max(&self) -> S {
        self.data.iter().copied().fold(S::neg_infinity(), S::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        assert_eq!(self.rank(), 2, "transpose expects a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Matrix product. A rank-1 right operand is treated as a column vector
    /// and the result is rank-1.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::shape(format!(
                "matmul lhs must be a matrix, got {:?}",
                self.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        match other.rank() {
            1 => {
                if other.shape[0] != k {
                    return Err(Error::shape(format!(
                        "matvec {:?} x {:?}",
                        self.shape, other.shape
                    )));
                }
                let data = (0..m)
                    .map(|i| {
                        self.data[i * k..(i + 1) * k]
                            .iter()
                            .zip(&other.data)
                            .map(|(&a, &b)| a * b)
                            .sum()
                    })
                    .collect();
                Ok(Self {
                    shape: vec![m],
                    data,
                })
            }
            2 => {
                if other.shape[0] != k {
                    return Err(Error::shape(format!(
                        "matmul {:?} x {:?}",
                        self.shape, other.shape
                    )));
                }
                let n = other.shape[1];
                let mut out = vec![S::zero(); m * n];
                for i in 0..m {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let a = self.data[i * k + p];
                        if a == S::zero() {
                            continue;
                        }
                        let brow = &other.data[p * n..(p + 1) * n];
                        for (o, &b) in orow.iter_mut().zip(brow) {
                            *o += a * b;
                        }
                    }
                }
                Ok(Self {
                    shape: vec![m, n],
                    data: out,
                })
            }
            _ => Err(Error::shape(format!(
                "matmul rhs rank {} unsupported",
                other.rank()
            ))),
        }
    }

    /// Adds a rank-1 `bias` to every row of a matrix (or to a vector of equal length).
    pub fn add_row(&self, bias: &Self) -> Self {
        let c = self.cols();
        assert_eq!(bias.len(), c, "row broadcast length mismatch");
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(c) {
            for (o, &b) in chunk.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        out
    }

    /// Euclidean norm of every row.
    pub fn row_norms(&self) -> Vec<S> {
        let c = self.cols();
        if c == 0 {
            return vec![S::zero(); self.rows()];
        }
        self.data
            .chunks(c)
            .map(|r| r.iter().map(|&v| v * v).sum::<S>().sqrt())
            .collect()
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::lit(v.as_f64())).collect(),
        }
    }
}

/// Returns `v` unchanged when `||v||₂ <= radius`, otherwise `v` rescaled onto
/// the sphere of that radius.
///
/// The rescaled result always satisfies `||out||₂ <= radius` in floating point,
/// so projecting twice is bitwise idempotent.
pub fn l2_project<S: Scalar>(v: &Tensor<S>, radius: S) -> Result<Tensor<S>> {
    if !(radius >= S::zero()) {
        return Err(Error::domain(format!("projection radius {radius} < 0")));
    }
    let norm = v.l2_norm();
    if norm <= radius {
        return Ok(v.clone());
    }
    let mut k = radius / norm;
    let mut out = v.scale(k);
    while out.l2_norm() > radius {
        k *= S::one() - S::epsilon();
        out = v.scale(k);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::zeros(&[0]);
        assert!(t.is_empty());
        assert_eq!(Tensor::<f64>::scalar(3.0).len(), 1);
    }

    #[test]
    fn frobenius_examples() {
        let a = Tensor::<f64>::from_f64(&[1, 2], &[3.0, 4.0]).unwrap();
        assert_eq!(a.frobenius_norm(), 5.0);
        assert_eq!(Tensor::<f64>::eye(4).frobenius_norm(), 2.0);
        let b = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        // 1 + 4 + 9 + 16 summed by hand
        assert!((b.frobenius_norm() - 30f64.sqrt()).abs() < 1e-15);
        assert!((b.frobenius_norm() - 5.4772).abs() < 1e-4);
    }

    #[test]
    fn projection_examples() {
        let v = Tensor::<f64>::vector_f64(&[3.0, 4.0]);
        assert_eq!(l2_project(&v, 10.0).unwrap(), v);
        assert_eq!(l2_project(&v, 5.0).unwrap(), v);
        let p = l2_project(&v, 1.0).unwrap();
        assert!((p.data()[0] - 0.6).abs() < 1e-15);
        assert!((p.data()[1] - 0.8).abs() < 1e-15);
        assert!(l2_project(&v, -1.0).is_err());
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = a.transpose();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[14., 32., 32., 77.]);
        let v = Tensor::vector_f64(&[1., 0., -1.]);
        assert_eq!(a.matmul(&v).unwrap().data(), &[-2., -2.]);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn f32_tensors_work() {
        let a = Tensor::<f32>::from_f64(&[1, 2], &[3.0, 4.0]).unwrap();
        assert_eq!(a.frobenius_norm(), 5.0f32);
    }
}
