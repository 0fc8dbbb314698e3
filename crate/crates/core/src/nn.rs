//! Parameter containers shared by the backbone, adapters and decoder.

use rand::Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Anything that owns named parameter tensors.
///
/// Names are dot-joined paths under `prefix`. Enumeration order is fixed
/// and is the order used by checkpoints and the optimizer.
pub trait Params<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map `x·W + b` with `W: [in×out]`, applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    /// Weights from `Uniform(±1/√in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[inputs, outputs], -bound, bound, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape<S>, prefix: &str, x: Var) -> Result<Var> {
        let w = tape.param(&join(prefix, "weight"), &self.weight);
        let b = tape.param(&join(prefix, "bias"), &self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

impl<S: Scalar> Params<S> for Linear<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub eps: f64,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(hidden: usize) -> Self {
        Self {
            gamma: Tensor::full(&[hidden], S::one()),
            beta: Tensor::zeros(&[hidden]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &mut Tape<S>, prefix: &str, x: Var) -> Result<Var> {
        let g = tape.param(&join(prefix, "gamma"), &self.gamma);
        let b = tape.param(&join(prefix, "beta"), &self.beta);
        tape.layer_norm(x, g, b, S::of(self.eps))
    }
}

impl<S: Scalar> Params<S> for LayerNorm<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Flips the trainable flag on every tensor, dropping stale gradients when
/// freezing.
pub fn set_trainable<S: Scalar, P: Params<S> + ?Sized>(p: &mut P, flag: bool) {
    p.visit_mut("", &mut |_, t| {
        t.trainable = flag;
        if !flag {
            t.grad = None;
        }
    });
}

pub fn count_params<S: Scalar, P: Params<S> + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, t| n += t.len());
    n
}
