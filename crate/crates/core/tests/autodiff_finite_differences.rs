//! Reverse-mode gradients checked against central finite differences.

use proptest::prelude::*;
use vaerobust::autodiff::{jacobian, Graph, Var};
use vaerobust::numerics::{gaussian_sample, RngStream, Tensor};
use vaerobust::Result;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central difference of a scalar function of a flat parameter vector.
fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut p = at.to_vec();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let down = f(&p);
            (up - down) / (2.0 * h)
        })
        .collect()
}

// two-layer tanh MLP, 2 -> 4 -> 1 : 8 + 4 + 4 + 1 = 17 weights, plus the 2 inputs and 1 scale = 20 leaves
fn tanh_mlp(g: &mut Graph<f64>, p: &[f64]) -> Result<(Var, Vec<Var>)> {
    let w1 = g.leaf(Tensor::from_f64(&[4, 2], &p[0..8])?);
    let b1 = g.leaf(Tensor::vector_f64(&p[8..12]));
    let w2 = g.leaf(Tensor::from_f64(&[1, 4], &p[12..16])?);
    let b2 = g.leaf(Tensor::vector_f64(&p[16..17]));
    let x = g.leaf(Tensor::vector_f64(&p[17..19]));
    let k = g.leaf(Tensor::vector_f64(&p[19..20]));
    let h = g.matmul(w1, x)?;
    let h = g.add(h, b1)?;
    let h = g.tanh(h);
    let o = g.matmul(w2, h)?;
    let o = g.add(o, b2)?;
    let o = g.mul(o, k)?;
    let o = g.square(o);
    Ok((g.sum(o), vec![w1, b1, w2, b2, x, k]))
}

#[test]
fn tanh_mlp_gradient_matches_central_differences() {
    let mut rng = RngStream::new(42, 0);
    for _ in 0..10 {
        let p: Tensor = gaussian_sample(&mut rng, &[20]);
        let p = p.into_data();
        let mut g = Graph::new();
        let (root, leaves) = tanh_mlp(&mut g, &p).unwrap();
        let grads = g.backward(root).unwrap();
        let analytic: Vec<f64> = leaves.iter().flat_map(|&v| grads.wrt(v).into_data()).collect();
        let f = |q: &[f64]| {
            let mut g = Graph::new();
            let (r, _) = tanh_mlp(&mut g, q).unwrap();
            g.value(r).item()
        };
        let numeric = fd_gradient(&f, &p, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(rel_err(*a, *n) <= 1e-5, "analytic {a} vs fd {n}");
        }
    }
}

#[test]
fn relu_mlp_jacobian_matches_finite_differences() {
    let mut rng = RngStream::new(9, 1);
    let w1: Tensor = gaussian_sample(&mut rng, &[6, 3]);
    let w2: Tensor = gaussian_sample(&mut rng, &[2, 6]);
    let forward = |g: &mut Graph<f64>, x: Var| -> Result<Var> {
        let a = g.constant(w1.clone());
        let h = g.matmul(a, x)?;
        let h = g.relu(h);
        let b = g.constant(w2.clone());
        g.matmul(b, h)
    };
    let at = Tensor::vector_f64(&[0.7, -0.4, 1.1]);
    // keep the evaluation point away from ReLU kinks
    let pre = w1.matmul(&at).unwrap();
    assert!(pre.data().iter().all(|v| v.abs() > 1e-2));
    let j = jacobian(forward, &at).unwrap();
    let h = 1e-4;
    for col in 0..3 {
        let eval = |d: f64| {
            let mut x = at.clone();
            x.data_mut()[col] += d;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let y = forward(&mut g, xv).unwrap();
            g.value(y).clone()
        };
        let (up, down) = (eval(h), eval(-h));
        for row in 0..2 {
            let fd = (up.data()[row] - down.data()[row]) / (2.0 * h);
            assert!(rel_err(j.get(row, col), fd) <= 1e-4);
        }
    }
}

#[test]
fn backward_is_bitwise_deterministic() {
    let mut rng = RngStream::new(5, 5);
    let p: Tensor = gaussian_sample(&mut rng, &[20]);
    let run = || {
        let mut g = Graph::new();
        let (r, leaves) = tanh_mlp(&mut g, p.data()).unwrap();
        let grads = g.backward(r).unwrap();
        leaves
            .iter()
            .flat_map(|&v| grads.wrt(v).into_data())
            .map(f64::to_bits)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Relu,
    Softplus,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Square,
    L2Norm,
}

fn apply(g: &mut Graph<f64>, op: Unary, x: Var) -> Var {
    match op {
        Unary::Relu => g.relu(x),
        Unary::Softplus => g.softplus(x),
        Unary::Sigmoid => g.sigmoid(x),
        Unary::Tanh => g.tanh(x),
        Unary::Exp => g.exp(x),
        Unary::Log => g.log(x),
        Unary::Square => g.square(x),
        Unary::L2Norm => g.l2_norm(x),
    }
}

fn unary_strategy() -> impl Strategy<Value = Unary> {
    prop_oneof![
        Just(Unary::Relu),
        Just(Unary::Softplus),
        Just(Unary::Sigmoid),
        Just(Unary::Tanh),
        Just(Unary::Exp),
        Just(Unary::Log),
        Just(Unary::Square),
        Just(Unary::L2Norm),
    ]
}

proptest! {
    #[test]
    fn every_unary_op_passes_gradient_check(
        op in unary_strategy(),
        xs in prop::collection::vec(-2.0f64..2.0, 1..6),
        ws in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let xs: Vec<f64> = match op {
            Unary::Log => xs.iter().map(|v| v.abs() + 0.1).collect(),
            // stay at least 1e-3 away from the kink
            Unary::Relu => xs.iter().map(|v| if v.abs() < 1e-3 { 0.5 } else { *v }).collect(),
            _ => xs,
        };
        let n = xs.len();
        let weights = Tensor::vector_f64(&ws[..n]);
        let f = |q: &[f64]| -> (f64, Vec<f64>) {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::vector_f64(q));
            let y = apply(&mut g, op, x);
            let y = if g.value(y).rank() == 0 {
                y
            } else {
                let w = g.constant(weights.clone());
                let m = g.mul(y, w).unwrap();
                g.sum(m)
            };
            let grads = g.backward(y).unwrap();
            (g.value(y).item(), grads.wrt(x).into_data())
        };
        let (_, analytic) = f(&xs);
        let numeric = fd_gradient(&|q| f(q).0, &xs, 1e-6);
        let tol = if matches!(op, Unary::Relu) { 1e-4 } else { 1e-5 };
        for (a, b) in analytic.iter().zip(&numeric) {
            prop_assert!(rel_err(*a, *b) <= tol, "{op:?}: {a} vs {b}");
        }
    }

    #[test]
    fn binary_ops_and_matmul_pass_gradient_check(
        a in prop::collection::vec(-2.0f64..2.0, 6),
        b in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let f = |q: &[f64]| -> (f64, Vec<f64>) {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::from_f64(&[2, 3], &q[..6]).unwrap());
            let y = g.leaf(Tensor::from_f64(&[3, 2], &q[6..]).unwrap());
            let m = g.matmul(x, y).unwrap();
            let yt = g.constant(Tensor::from_f64(&[2, 2], &[1.0, -0.5, 0.25, 2.0]).unwrap());
            let s = g.sub(m, yt).unwrap();
            let p = g.mul(s, m).unwrap();
            let r = g.row_sum(p);
            let head = g.slice(x, 0, 2).unwrap();
            let head = g.row_sum(head);
            let r = g.add(r, head).unwrap();
            let m2 = g.broadcast_rows(r, 3).unwrap();
            let bias = g.constant(Tensor::vector_f64(&[0.5, -1.0]));
            let m2 = g.add_bias(m2, bias).unwrap();
            let m2 = g.tanh(m2);
            let r2 = g.sum(m2);
            let r = g.add_scalar(r, 1.0);
            let r = g.l2_norm(r);
            let r = g.add(r, r2).unwrap();
            let r = g.scale(r, 0.5);
            let total = g.sum(r);
            let grads = g.backward(total).unwrap();
            let mut out = grads.wrt(x).into_data();
            out.extend(grads.wrt(y).into_data());
            (g.value(total).item(), out)
        };
        let mut q = a.clone();
        q.extend(&b);
        let (_, analytic) = f(&q);
        let numeric = fd_gradient(&|p| f(p).0, &q, 1e-6);
        for (x, y) in analytic.iter().zip(&numeric) {
            prop_assert!(rel_err(*x, *y) <= 1e-5);
        }
    }
}
