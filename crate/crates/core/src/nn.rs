//! Affine layers and the binding of parameter tensors onto a tape.

use alloc::vec::Vec;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Fully connected layer `x · W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.bias_add(y, self.bias)
    }
}

impl<T: Real> Linear<T> {
    /// Normal init with standard deviation `sqrt(2 / fan_in)`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut crate::Rng) -> Self {
        let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
        let weight = Tensor::<T>::standard_normal(fan_in, fan_out, rng)
            .map(|v| T::from_f64(v.as_f64() * std));
        Self {
            weight,
            bias: Tensor::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    /// Places the layer on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> LinearVars {
        let leaf = |tape: &mut Tape<T>, t: &Tensor<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        LinearVars {
            weight: leaf(tape, &self.weight),
            bias: leaf(tape, &self.bias),
        }
    }

    /// Tape-free forward pass.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = x.matmul(&self.weight)?;
        let b = self.bias.row(0);
        Ok(Tensor::from_fn(y.rows(), y.cols(), |r, c| y.get(r, c) + b[c]))
    }
}

/// A model made of an ordered list of tensors.
///
/// `tensors` and `tensors_mut` must list the same tensors in the same order as
/// the `Var`s returned by the model's bind method, so that gradients line up.
pub trait Parameters<T: Real> {
    fn tensors(&self) -> Vec<&Tensor<T>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;
}

impl<T: Real> Parameters<T> for Linear<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        alloc::vec![&self.weight, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        alloc::vec![&mut self.weight, &mut self.bias]
    }
}

impl LinearVars {
    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}
