//! A minimal reverse-mode tape over [`Tensor`] values.
//!
//! Every node is created by a [`Graph`] method which evaluates it eagerly;
//! [`Graph::backward`] then walks the tape in reverse. Only nodes that
//! transitively depend on a [`Graph::param`] leaf receive gradients.

use serde::{Deserialize, Serialize};

use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `max(x, 0)`
    Relu,
    /// `ln(1 + e^x) - ln 2`: smooth, zero at the origin.
    Smooth,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Smooth => softplus(x) - std::f64::consts::LN_2,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input and the output value.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Smooth => sigmoid(x),
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

impl Reduction {
    pub(crate) fn divisor(self, n: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean => n as f64,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    InstanceNorm {
        input: Var,
        inv_stds: Vec<f64>,
    },
    ChannelAffine {
        input: Var,
        scale: Var,
        shift: Var,
    },
    MixRows {
        bank: Var,
        weights: Vec<f64>,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Add(Var, Var),
    MulConst {
        input: Var,
        factor: Tensor,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Gram {
        input: Var,
        divisor: f64,
    },
    SquaredError {
        input: Var,
        target: Tensor,
        divisor: f64,
    },
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = tensor::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        );
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        )
    }

    /// Instance normalization without the affine part.
    pub fn instance_norm(&mut self, input: Var, eps: f64) -> Var {
        let (out, inv_stds) = tensor::instance_norm(self.value(input), eps);
        let rg = self.rg(input);
        self.push(out, Op::InstanceNorm { input, inv_stds }, rg)
    }

    /// `x[c] * scale[c] + shift[c]` with `scale`, `shift` of shape `[C]`.
    pub fn channel_affine(&mut self, input: Var, scale: Var, shift: Var) -> Var {
        let x = self.value(input);
        let (c, h, w) = x.dims3();
        let s = self.value(scale).data();
        let b = self.value(shift).data();
        assert_eq!(s.len(), c);
        assert_eq!(b.len(), c);
        let n = h * w;
        let mut out = x.clone();
        for (ch, chunk) in out.data_mut().chunks_mut(n).enumerate() {
            for v in chunk {
                *v = *v * s[ch] + b[ch];
            }
        }
        let rg = self.rg(input) || self.rg(scale) || self.rg(shift);
        self.push(out, Op::ChannelAffine { input, scale, shift }, rg)
    }

    /// Convex mix of the rows of an `[N, C]` bank: `Σₖ wₖ · bank[k]`.
    pub fn mix_rows(&mut self, bank: Var, weights: &[f64]) -> Var {
        let b = self.value(bank);
        assert_eq!(b.shape().len(), 2);
        assert_eq!(b.shape()[0], weights.len());
        let out = Tensor::new(vec![b.shape()[1]], mix_rows(b.data(), b.shape()[1], weights))
            .expect("mix_rows output shape");
        let rg = self.rg(bank);
        self.push(
            out,
            Op::MixRows {
                bank,
                weights: weights.to_vec(),
            },
            rg,
        )
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let out = self.value(input).map(|x| kind.apply(x));
        let rg = self.rg(input);
        self.push(out, Op::Activation { input, kind }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape());
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, input: Var, factor: Tensor) -> Var {
        let x = self.value(input);
        assert_eq!(x.shape(), factor.shape());
        let data = x.data().iter().zip(factor.data()).map(|(a, b)| a * b).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("mul_const shape");
        let rg = self.rg(input);
        self.push(out, Op::MulConst { input, factor }, rg)
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Var {
        let out = tensor::upsample_nearest(self.value(input), factor);
        let rg = self.rg(input);
        self.push(out, Op::Upsample { input, factor }, rg)
    }

    /// Gram matrix of a C×H×W map, divided by `divisor`.
    pub fn gram(&mut self, input: Var, divisor: f64) -> Var {
        let out = tensor::gram(self.value(input), divisor);
        let rg = self.rg(input);
        self.push(out, Op::Gram { input, divisor }, rg)
    }

    /// Reduced squared difference against a constant target; a scalar node.
    pub fn squared_error(&mut self, input: Var, target: &Tensor, reduction: Reduction) -> Var {
        let x = self.value(input);
        assert_eq!(x.shape(), target.shape(), "squared_error shape mismatch");
        let divisor = reduction.divisor(x.len());
        let sum: f64 = x.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.rg(input);
        self.push(
            Tensor::scalar(sum / divisor),
            Op::SquaredError {
                input,
                target: target.clone(),
                divisor,
            },
            rg,
        )
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes, accumulated left to right.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut acc = 0.0;
        for (i, &(v, w)) in terms.iter().enumerate() {
            let term = w * self.value(v).item();
            acc = if i == 0 { term } else { acc + term };
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(Tensor::scalar(acc), Op::WeightedSum(terms.to_vec()), rg)
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward() needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let send = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.rg(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let (dx, dw, db) =
                        tensor::conv2d_backward(self.value(*input), self.value(*weight), &g, *stride, *pad);
                    send(*input, dx, &mut grads);
                    send(*weight, dw, &mut grads);
                    if let Some(b) = bias {
                        send(*b, db, &mut grads);
                    }
                }
                Op::InstanceNorm { input, inv_stds } => {
                    let dx = tensor::instance_norm_backward(&node.value, inv_stds, &g);
                    send(*input, dx, &mut grads);
                }
                Op::ChannelAffine { input, scale, shift } => {
                    let x = self.value(*input);
                    let (c, h, w) = x.dims3();
                    let n = h * w;
                    let s = self.value(*scale).data();
                    let mut dx = g.clone();
                    let mut ds = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for ch in 0..c {
                        let gs = &g.data()[ch * n..(ch + 1) * n];
                        let xs = &x.data()[ch * n..(ch + 1) * n];
                        ds[ch] = gs.iter().zip(xs).map(|(a, b)| a * b).sum();
                        db[ch] = gs.iter().sum();
                        for v in &mut dx.data_mut()[ch * n..(ch + 1) * n] {
                            *v *= s[ch];
                        }
                    }
                    send(*input, dx, &mut grads);
                    send(*scale, Tensor::new(vec![c], ds).unwrap(), &mut grads);
                    send(*shift, Tensor::new(vec![c], db).unwrap(), &mut grads);
                }
                Op::MixRows { bank, weights } => {
                    let shape = self.value(*bank).shape().to_vec();
                    let c = shape[1];
                    let mut d = vec![0.0; shape[0] * c];
                    for (k, &wk) in weights.iter().enumerate() {
                        for ch in 0..c {
                            d[k * c + ch] = wk * g.data()[ch];
                        }
                    }
                    send(*bank, Tensor::new(shape, d).unwrap(), &mut grads);
                }
                Op::Activation { input, kind } => {
                    let x = self.value(*input);
                    let data = x
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .zip(g.data())
                        .map(|((&xi, &yi), &gi)| gi * kind.derivative(xi, yi))
                        .collect();
                    send(*input, Tensor::new(x.shape().to_vec(), data).unwrap(), &mut grads);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g, &mut grads);
                }
                Op::MulConst { input, factor } => {
                    let data = g.data().iter().zip(factor.data()).map(|(a, b)| a * b).collect();
                    send(*input, Tensor::new(g.shape().to_vec(), data).unwrap(), &mut grads);
                }
                Op::Upsample { input, factor } => {
                    send(*input, tensor::upsample_nearest_backward(&g, *factor), &mut grads);
                }
                Op::Gram { input, divisor } => {
                    let dx = tensor::gram_backward(self.value(*input), *divisor, &g);
                    send(*input, dx, &mut grads);
                }
                Op::SquaredError {
                    input,
                    target,
                    divisor,
                } => {
                    let x = self.value(*input);
                    let k = 2.0 * g.item() / divisor;
                    let data = x.data().iter().zip(target.data()).map(|(a, b)| k * (a - b)).collect();
                    send(*input, Tensor::new(x.shape().to_vec(), data).unwrap(), &mut grads);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        send(v, Tensor::scalar(w * g.item()), &mut grads);
                    }
                }
            }
        }
        Gradients(grads)
    }
}

/// Row mix used both on and off the tape so the two paths agree bit for bit.
pub(crate) fn mix_rows(bank: &[f64], cols: usize, weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (k, &wk) in weights.iter().enumerate() {
        for (o, b) in out.iter_mut().zip(&bank[k * cols..(k + 1) * cols]) {
            *o += wk * b;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Central differences of `f` at `x`.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.clone();
                a.data_mut()[i] += h;
                let mut b = x.clone();
                b.data_mut()[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    fn pipeline(g: &mut Graph, x: Var) -> Var {
        let w = g.constant(Tensor::new(vec![2, 2, 3, 3], (0..36).map(|i| (i as f64 * 0.7).cos() * 0.4).collect()).unwrap());
        let b = g.constant(t(&[2], &[0.1, -0.2]));
        let y = g.conv2d(x, w, Some(b), 1, 1);
        let y = g.instance_norm(y, 1e-5);
        let s = g.constant(t(&[2], &[1.5, 0.5]));
        let sh = g.constant(t(&[2], &[0.2, 0.3]));
        let y = g.channel_affine(y, s, sh);
        let y = g.activation(y, Activation::Smooth);
        let y = g.upsample_nearest(y, 2);
        let gr = g.gram(y, 7.0);
        let target = Tensor::full(&[2, 2], 0.05);
        let l1 = g.squared_error(gr, &target, Reduction::Sum);
        let l2 = g.squared_error(y, &Tensor::full(&[2, 8, 8], 0.1), Reduction::Mean);
        g.weighted_sum(&[(l1, 3.0), (l2, 0.5)])
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let x0 = Tensor::new(vec![2, 4, 4], (0..32).map(|i| (i as f64 * 0.31).sin()).collect()).unwrap();
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let loss = pipeline(&mut g, x);
        let analytic = g.backward(loss).get(x).unwrap().clone();
        let numeric = numeric_grad(&x0, |xv| {
            let mut g = Graph::new();
            let x = g.constant(xv.clone());
            let l = pipeline(&mut g, x);
            g.value(l).item()
        });
        assert_close(analytic.data(), &numeric, 1e-6);
    }

    #[test]
    fn mix_rows_gradient_is_weighted() {
        let mut g = Graph::new();
        let bank = g.param(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let m = g.mix_rows(bank, &[0.0, 1.0, 0.0]);
        assert_eq!(g.value(m).data(), &[3.0, 4.0]);
        let l = g.squared_error(m, &t(&[2], &[0.0, 0.0]), Reduction::Sum);
        let grads = g.backward(l);
        assert_eq!(grads.get(bank).unwrap().data(), &[0.0, 0.0, 6.0, 8.0, 0.0, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(t(&[2], &[1.0, 2.0]));
        let p = g.param(t(&[2], &[0.5, 0.5]));
        let s = g.add(c, p);
        let l = g.squared_error(s, &t(&[2], &[0.0, 0.0]), Reduction::Mean);
        let grads = g.backward(l);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[1.5, 2.5]);
    }

    #[test]
    fn smooth_activation_is_zero_at_origin() {
        assert_eq!(Activation::Smooth.apply(0.0), 0.0);
        assert!((Activation::Smooth.apply(50.0) - (50.0 - std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert!(Activation::Sigmoid.apply(-800.0) >= 0.0);
        assert!(Activation::Sigmoid.apply(800.0) <= 1.0);
    }
}
