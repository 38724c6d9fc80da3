//! Single-level reverse-mode differentiation over [`Tensor`]s.
//!
//! Every primitive appends one node to the tape and validates its output; a
//! non-finite result is reported as [`Error::Numeric`] naming the primitive.
//! [`Tape::backward`] walks the nodes once in reverse insertion order, which
//! is a valid reverse topological order because inputs always precede the
//! node that consumes them. Gradients of shared subexpressions accumulate.
//!
//! `relu`, `leaky_relu` and `max0` use subgradient 0 (resp. `slope`) at the
//! kink. Their inputs are remembered so that finite-difference checks can
//! skip points that sit next to a kink (see [`Tape::kink_inputs`]).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt, matmul_raw, matmul_tn, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BiasAdd(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Square(Var),
    Mean(Var),
    Sum(Var),
    SumCols(Var),
    SoftmaxCe { logits: Var, targets: Vec<usize>, probs: Tensor<T> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradient buffers produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `var`; exact zeros when `var` does not reach the loss.
    pub fn get(&self, var: Var) -> Tensor<T> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn is_reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }

    /// Collects gradients in the order of `vars`.
    pub fn collect(&self, vars: &[Var]) -> Vec<Tensor<T>> {
        vars.iter().map(|&v| self.get(v)).collect()
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes checked by caller")
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, primitive: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric { primitive });
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::BiasAdd(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::Relu(x)
            | Op::LeakyRelu(x, _)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Sigmoid(x)
            | Op::Square(x)
            | Op::Mean(x)
            | Op::Sum(x)
            | Op::SumCols(x) => self.nodes[x.0].needs_grad,
            Op::SoftmaxCe { logits, .. } => self.nodes[logits.0].needs_grad,
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("unknown tape node {}", v.0)));
        }
        Ok(())
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient (data, noise, frozen weights).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if t.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "expected a scalar node, found {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0].as_f64())
    }

    /// Input values of every kinked primitive recorded so far, flattened.
    pub fn kink_inputs(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) | Op::LeakyRelu(x, _) = node.op {
                out.extend(self.nodes[x.0].value.data().iter().map(|v| v.as_f64()));
            }
        }
        out
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::dim(
                "matmul",
                format!("{:?} times {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = matmul_raw(va, vb);
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check_var(x)?;
        self.check_var(bias)?;
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(Error::dim(
                "bias_add",
                format!("bias {:?} for input {:?}", vb.shape(), vx.shape()),
            ));
        }
        let b = vb.row(0);
        let out = Tensor::from_fn(vx.rows(), vx.cols(), |r, c| vx.get(r, c) + b[c]);
        self.push(out, Op::BiasAdd(x, bias), "bias_add")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), "relu")
    }

    /// `max(0, x)`; the hinge used by the margin losses. Same kernel as [`Tape::relu`].
    pub fn max0(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), "max0")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.check_var(x)?;
        let s = T::from_f64(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        self.push(out, Op::LeakyRelu(x, s), "leaky_relu")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let out = self.value(x).map(T::exp_libm);
        self.push(out, Op::Exp(x), "exp")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let out = self.value(x).map(T::ln_libm);
        self.push(out, Op::Log(x), "log")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let out = self.value(x).map(|v| {
            // stable in both tails
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp_libm())
            } else {
                let e = v.exp_libm();
                e / (T::one() + e)
            }
        });
        self.push(out, Op::Sigmoid(x), "sigmoid")
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x), "square")
    }

    /// Mean over all entries, as a 1x1 node.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::dim("mean", "empty tensor"));
        }
        let out = Tensor::scalar(T::from_f64(v.mean()));
        self.push(out, Op::Mean(x), "mean")
    }

    /// Sum over all entries, as a 1x1 node.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let out = Tensor::scalar(T::from_f64(self.value(x).sum()));
        self.push(out, Op::Sum(x), "sum")
    }

    /// Per-row sum over columns: `n x m -> n x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let v = self.value(x);
        let out = Tensor::from_fn(v.rows(), 1, |r, _| {
            T::from_f64(v.row(r).iter().map(|e| e.as_f64()).sum())
        });
        self.push(out, Op::SumCols(x), "sum_cols")
    }

    /// Mean softmax cross-entropy of `logits` (n x k) against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        self.check_var(logits)?;
        let v = self.value(logits);
        if targets.len() != v.rows() || v.rows() == 0 {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{} targets for {} rows", targets.len(), v.rows()),
            ));
        }
        let k = v.cols();
        let mut probs = Tensor::zeros(v.rows(), k);
        let mut total = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::dim(
                    "softmax_cross_entropy",
                    format!("target {t} >= {k} classes"),
                ));
            }
            let row = v.row(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.as_f64()));
            let denom: f64 = row.iter().map(|x| libm::exp(x.as_f64() - max)).sum();
            for (c, x) in row.iter().enumerate() {
                probs.set(r, c, T::from_f64(libm::exp(x.as_f64() - max) / denom));
            }
            total += max + libm::log(denom) - row[t].as_f64();
        }
        let out = Tensor::scalar(T::from_f64(total / targets.len() as f64));
        self.push(
            out,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            "softmax_cross_entropy",
        )
    }

    // Composites built only from the primitives above.

    /// Multiplies every entry by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let (r, c) = self.value(x).shape();
        let k = self.constant(Tensor::filled(r, c, T::from_f64(factor)));
        self.mul(x, k)
    }

    /// Adds a constant to every entry.
    pub fn add_scalar(&mut self, x: Var, shift: f64) -> Result<Var> {
        let c = self.value(x).cols();
        let b = self.constant(Tensor::filled(1, c, T::from_f64(shift)));
        self.bias_add(x, b)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    /// Clamp into `[lo, hi]` as `x - relu(x - hi) + relu(lo - x)`; zero gradient outside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::Contract(format!("clamp bounds [{lo}, {hi}]")));
        }
        let over = self.add_scalar(x, -hi)?;
        let over = self.relu(over)?;
        let neg = self.neg(x)?;
        let under = self.add_scalar(neg, lo)?;
        let under = self.relu(under)?;
        let y = self.sub(x, over)?;
        self.add(y, under)
    }

    /// Row-wise inner product: `n x m, n x m -> n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum_cols(p)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check_var(loss)?;
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, found {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let ga = matmul_nt(&g, self.value(*b));
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = matmul_tn(self.value(*a), &g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::BiasAdd(x, bias) => {
                    if self.nodes[bias.0].needs_grad {
                        let cols = g.cols();
                        let mut acc = vec![0.0f64; cols];
                        for r in 0..g.rows() {
                            for (slot, v) in acc.iter_mut().zip(g.row(r)) {
                                *slot += v.as_f64();
                            }
                        }
                        let gb = Tensor::new(1, cols, acc.into_iter().map(T::from_f64).collect())?;
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.nodes[x.0].needs_grad {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut grads, *b, g.map(|v| -v));
                    }
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let ga = zip_map(&g, self.value(*b), |d, y| d * y);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = zip_map(&g, self.value(*a), |d, x| d * x);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Relu(x) => {
                    let gx = zip_map(&g, self.value(*x), |d, v| {
                        if v > T::zero() {
                            d
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::LeakyRelu(x, s) => {
                    let s = *s;
                    let gx = zip_map(&g, self.value(*x), |d, v| if v > T::zero() { d } else { d * s });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Exp(x) => {
                    let gx = zip_map(&g, &node.value, |d, y| d * y);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Log(x) => {
                    let gx = zip_map(&g, self.value(*x), |d, v| d / v);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = zip_map(&g, &node.value, |d, y| d * y * (T::one() - y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Square(x) => {
                    let two = T::from_f64(2.0);
                    let gx = zip_map(&g, self.value(*x), |d, v| two * d * v);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mean(x) => {
                    let (r, c) = self.value(*x).shape();
                    let d = g.data()[0].as_f64() / (r * c) as f64;
                    accumulate(&mut grads, *x, Tensor::filled(r, c, T::from_f64(d)));
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Tensor::filled(r, c, g.data()[0]));
                }
                Op::SumCols(x) => {
                    let (r, c) = self.value(*x).shape();
                    let gx = Tensor::from_fn(r, c, |i, _| g.get(i, 0));
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxCe {
                    logits,
                    targets,
                    probs,
                } => {
                    let n = targets.len() as f64;
                    let d = g.data()[0].as_f64() / n;
                    let mut gx = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        gx.set(r, t, gx.get(r, t) - T::one());
                    }
                    let gx = gx.map(|v| T::from_f64(v.as_f64() * d));
                    accumulate(&mut grads, *logits, gx);
                }
            }
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::Numeric {
                        primitive: op_name(&self.nodes[i].op),
                    });
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e = *e + *x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::BiasAdd(..) => "bias_add",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Relu(..) => "relu",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Sigmoid(..) => "sigmoid",
        Op::Square(..) => "square",
        Op::Mean(..) => "mean",
        Op::Sum(..) => "sum",
        Op::SumCols(..) => "sum_cols",
        Op::SoftmaxCe { .. } => "softmax_cross_entropy",
    }
}

impl core::fmt::Display for Var {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_leaky_relu_definitions() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(1, 3, alloc::vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let x = tape.constant(Tensor::new(1, 2, alloc::vec![-1.0, 2.0]).unwrap());
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert!((tape.value(y).data()[0] + 0.2).abs() < 1e-7);
        assert_eq!(tape.value(y).data()[1], 2.0);
    }

    #[test]
    fn uniform_logits_give_ln3() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(1, 3));
        for target in 0..3 {
            let l = tape.softmax_cross_entropy(x, &[target]).unwrap();
            assert!((tape.scalar(l).unwrap() - libm::log(3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_sum_of_linear_map_is_input_per_row() {
        // loss = sum(x · W) with x fixed: dL/dW[i][j] = sum over rows of x[r][i]
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(1, 3, &[1.0, -2.0, 0.5]));
        let w = tape.param(t(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let y = tape.matmul(x, w).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap().get(w);
        assert_eq!(g.data(), &[1.0, 1.0, -2.0, -2.0, 0.5, 0.5]);
    }

    #[test]
    fn mean_of_square_gradient() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(t(1, 1, &[3.0]));
        let s = tape.square(p).unwrap();
        let l = tape.mean(s).unwrap();
        assert_eq!(tape.backward(l).unwrap().get(p).data(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(t(1, 2, &[3.0, 1.0]));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_params_get_exact_zero() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let q = tape.param(t(1, 1, &[2.0]));
        let l = tape.square(q).unwrap();
        let grads = tape.backward(l).unwrap();
        assert!(!grads.is_reached(p));
        assert_eq!(grads.get(p), Tensor::zeros(2, 2));
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // y = x*x via a shared node versus two independent copies of x.
        let mut shared = Tape::<f64>::new();
        let x = shared.param(t(1, 2, &[1.5, -0.5]));
        let e = shared.exp(x).unwrap();
        let y = shared.mul(e, e).unwrap();
        let l = shared.sum(y).unwrap();
        let gs = shared.backward(l).unwrap().get(x);

        let mut dup = Tape::<f64>::new();
        let x1 = dup.param(t(1, 2, &[1.5, -0.5]));
        let x2 = dup.param(t(1, 2, &[1.5, -0.5]));
        let e1 = dup.exp(x1).unwrap();
        let e2 = dup.exp(x2).unwrap();
        let y = dup.mul(e1, e2).unwrap();
        let l = dup.sum(y).unwrap();
        let g = dup.backward(l).unwrap();
        let (g1, g2) = (g.get(x1), g.get(x2));
        for i in 0..2 {
            let expect = g1.data()[i] + g2.data()[i];
            assert!((gs.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_and_numeric_errors() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
        let z = tape.constant(Tensor::zeros(1, 1));
        assert_eq!(
            tape.log(z).unwrap_err(),
            Error::Numeric { primitive: "log" }
        );
        let big = tape.constant(Tensor::filled(1, 1, 1000.0));
        assert_eq!(
            tape.exp(big).unwrap_err(),
            Error::Numeric { primitive: "exp" }
        );
    }

    #[test]
    fn clamp_composite() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(1, 3, &[-12.0, 0.5, 11.0]));
        let y = tape.clamp(x, -10.0, 10.0).unwrap();
        assert_eq!(tape.value(y).data(), &[-10.0, 0.5, 10.0]);
        let l = tape.sum(y).unwrap();
        assert_eq!(tape.backward(l).unwrap().get(x).data(), &[0.0, 1.0, 0.0]);
    }
}
