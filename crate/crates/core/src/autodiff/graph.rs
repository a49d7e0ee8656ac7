use crate::error::{Error, Result};
use crate::numerics::special::{sigmoid, softplus};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation that produced a node. Reductions and slicing act on the last axis.
#[derive(Clone, Debug)]
pub enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    /// Sum of every entry, giving a rank-0 tensor.
    Sum(Var),
    /// Sum along the last axis.
    RowSum(Var),
    /// Euclidean norm along the last axis.
    L2Norm(Var),
    Slice { input: Var, start: usize, end: usize },
    Concat(Vec<Var>),
    /// Repeats a rank-1 tensor as the rows of a matrix.
    BroadcastRows { input: Var, rows: usize },
}

#[derive(Clone, Debug)]
struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
    needs_grad: bool,
}

/// Append-only expression graph recorded during a forward pass.
///
/// Nodes can only reference earlier nodes, so the graph is acyclic by
/// construction and reverse insertion order is a valid topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph<S = f64> {
    nodes: Vec<Node<S>>,
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    adjoints: Vec<Option<Tensor<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to `v`; zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<S> {
        match &self.adjoints[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.adjoints[v.0].as_ref()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op<S> {
        &self.nodes[v.0].op
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, op: Op<S>, value: Tensor<S>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(op, value, needs_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(Op::MatMul(a, b), v, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).add(self.value(b));
        Ok(self.derived(Op::Add(a, b), v, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).sub(self.value(b));
        Ok(self.derived(Op::Sub(a, b), v, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).mul(self.value(b));
        Ok(self.derived(Op::Mul(a, b), v, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        let v = self.value(a).scale(k);
        self.derived(Op::Scale(a, k), v, &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -S::one())
    }

    pub fn add_scalar(&mut self, a: Var, k: S) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.derived(Op::AddScalar(a), v, &[a])
    }

    fn unary(&mut self, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Var {
        let v = self.value(a).map(f);
        self.derived(op, v, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > S::zero() { x } else { S::zero() })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), S::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), S::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), S::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.derived(Op::Sum(a), v, &[a])
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let sums: Vec<S> = if c == 0 {
            vec![S::zero(); t.rows()]
        } else {
            t.data().chunks(c).map(|r| r.iter().copied().sum()).collect()
        };
        let v = reduced(t, sums);
        self.derived(Op::RowSum(a), v, &[a])
    }

    pub fn l2_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = reduced(t, t.row_norms());
        self.derived(Op::L2Norm(a), v, &[a])
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        if start > end || end > c || t.rank() == 0 {
            return Err(Error::shape(format!(
                "slice {start}..{end} of {:?}",
                t.shape()
            )));
        }
        let w = end - start;
        let data: Vec<S> = (0..t.len() / c.max(1))
            .flat_map(|r| t.data()[r * c + start..r * c + end].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        let v = Tensor::new(shape, data)?;
        Ok(self.derived(
            Op::Slice {
                input: a,
                start,
                end,
            },
            v,
            &[a],
        ))
    }

    /// Concatenation along the last axis; leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let lead = self.value(*first).shape()[..self.value(*first).rank() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut width = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::shape(format!("concat of {:?} onto {:?}", s, lead)));
            }
            width += s[lead.len()];
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                let c = t.cols();
                data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(width);
        let v = Tensor::new(shape, data)?;
        Ok(self.derived(Op::Concat(parts.to_vec()), v, parts))
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(Error::shape(format!(
                "broadcast_rows expects a vector, got {:?}",
                t.shape()
            )));
        }
        let n = t.len();
        let data: Vec<S> = (0..rows).flat_map(|_| t.data().iter().copied()).collect();
        let v = Tensor::matrix(rows, n, data)?;
        Ok(self.derived(Op::BroadcastRows { input: a, rows }, v, &[a]))
    }

    /// `a + bias` with `bias` repeated over the rows of `a` when `a` is a matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        if self.value(a).rank() == 2 {
            let rows = self.value(a).rows();
            let b = self.broadcast_rows(bias, rows)?;
            self.add(a, b)
        } else {
            self.add(a, bias)
        }
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        let v = self.value(root);
        if v.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                v.shape()
            )));
        }
        self.backward_with_seed(root, Tensor::ones(v.shape()))
    }

    /// Vector-Jacobian product: propagates the adjoint `seed` placed on `root`.
    pub fn backward_with_seed(&self, root: Var, seed: Tensor<S>) -> Result<Gradients<S>> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::shape(format!(
                "seed {:?} for root {:?}",
                seed.shape(),
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor<S>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(node, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        adj.resize(self.nodes.len(), None);
        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(
        &self,
        node: &Node<S>,
        g: &Tensor<S>,
        adj: &mut [Option<Tensor<S>>],
    ) -> Result<()> {
        let mut acc = |v: Var, d: Tensor<S>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(t) => t.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if bv.rank() == 1 {
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let mut da = vec![S::zero(); m * k];
                    for i in 0..m {
                        for p in 0..k {
                            da[i * k + p] = g.data()[i] * bv.data()[p];
                        }
                    }
                    acc(*a, Tensor::matrix(m, k, da)?);
                    acc(*b, av.transpose().matmul(g)?);
                } else {
                    acc(*a, g.matmul(&bv.transpose())?);
                    acc(*b, av.transpose().matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-S::one()));
            }
            Op::Mul(a, b) => {
                acc(*a, g.mul(val(*b)));
                acc(*b, g.mul(val(*a)));
            }
            Op::Scale(a, k) => acc(*a, g.scale(*k)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            // subgradient 0 at the kink
            Op::Relu(a) => acc(
                *a,
                g.zip_map(val(*a), |gi, x| if x > S::zero() { gi } else { S::zero() }),
            ),
            Op::Softplus(a) => acc(*a, g.zip_map(val(*a), |gi, x| gi * sigmoid(x))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gi, s| gi * s * (S::one() - s))),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |gi, t| gi * (S::one() - t * t))),
            Op::Exp(a) => acc(*a, g.mul(y)),
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |gi, x| gi / x)),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |gi, x| gi * S::lit(2.0) * x)),
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::RowSum(a) => {
                let x = val(*a);
                let c = x.cols();
                let d: Vec<S> = g
                    .data()
                    .iter()
                    .flat_map(|&gi| std::iter::repeat_n(gi, c))
                    .collect();
                acc(*a, Tensor::new(x.shape().to_vec(), d)?);
            }
            Op::L2Norm(a) => {
                let x = val(*a);
                let c = x.cols();
                let mut d = vec![S::zero(); x.len()];
                for (r, (&gi, &n)) in g.data().iter().zip(y.data()).enumerate() {
                    if n > S::zero() {
                        for j in 0..c {
                            d[r * c + j] = gi * x.data()[r * c + j] / n;
                        }
                    }
                }
                acc(*a, Tensor::new(x.shape().to_vec(), d)?);
            }
            Op::Slice { input, start, end } => {
                let x = val(*input);
                let c = x.cols();
                let w = end - start;
                let mut d = vec![S::zero(); x.len()];
                for r in 0..x.len() / c.max(1) {
                    d[r * c + start..r * c + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                acc(*input, Tensor::new(x.shape().to_vec(), d)?);
            }
            Op::Concat(parts) => {
                let width = g.cols();
                let rows = g.len() / width.max(1);
                let mut offset = 0;
                for p in parts {
                    let x = val(*p);
                    let c = x.cols();
                    let d: Vec<S> = (0..rows)
                        .flat_map(|r| {
                            g.data()[r * width + offset..r * width + offset + c]
                                .iter()
                                .copied()
                        })
                        .collect();
                    acc(*p, Tensor::new(x.shape().to_vec(), d)?);
                    offset += c;
                }
            }
            Op::BroadcastRows { input, rows } => {
                let n = val(*input).len();
                let mut d = vec![S::zero(); n];
                for r in 0..*rows {
                    for (o, &gi) in d.iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                        *o += gi;
                    }
                }
                acc(*input, Tensor::vector(d));
            }
        }
        Ok(())
    }
}

// Shape of a last-axis reduction: [..., n] -> [...].
fn reduced<S: Scalar>(t: &Tensor<S>, values: Vec<S>) -> Tensor<S> {
    let shape = t.shape()[..t.rank().saturating_sub(1)].to_vec();
    Tensor::new(shape, values).expect("one value per row")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::vector_f64(&[1.0, 2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn inactive_relu_has_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(-5.0));
        let r = g.relu(x);
        assert_eq!(g.backward(r).unwrap().wrt(x).item(), 0.0);
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(0.0));
        let r = g.relu(x);
        assert_eq!(g.backward(r).unwrap().wrt(x).item(), 0.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::vector_f64(&[1.0, 2.0]));
        let y = g.square(x);
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_adjoint() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::vector_f64(&[1.0, 2.0]));
        let x = g.leaf(Tensor::vector_f64(&[3.0, 4.0]));
        let p = g.mul(c, x).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(x).data(), &[1.0, 2.0]);
    }

    #[test]
    fn slice_concat_broadcast_round_trip() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::vector_f64(&[1.0, 2.0, 3.0]));
        let a = g.slice(x, 0, 1).unwrap();
        let b = g.slice(x, 1, 3).unwrap();
        let c = g.concat(&[b, a]).unwrap();
        assert_eq!(g.value(c).data(), &[2.0, 3.0, 1.0]);
        let m = g.broadcast_rows(c, 2).unwrap();
        let w = g.constant(Tensor::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let p = g.mul(m, w).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        // d/dx of (x1*5 + x2*7 + x0*9)
        assert_eq!(grads.wrt(x).data(), &[9.0, 5.0, 7.0]);
    }

    #[test]
    fn matvec_gradient() {
        let mut g = Graph::<f64>::new();
        let w = g.leaf(Tensor::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap());
        let v = g.leaf(Tensor::vector_f64(&[1.0, -1.0]));
        let y = g.matmul(w, v).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(w).data(), &[1., -1., 1., -1.]);
        assert_eq!(grads.wrt(v).data(), &[4., 6.]);
    }
}
