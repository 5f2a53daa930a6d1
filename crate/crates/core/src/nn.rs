//! Layers built on the tape: dense layers and graph convolutions.
//!
//! Layers own their parameter tensors. A forward pass first binds every
//! parameter to a tape leaf ([`bind`]) and then consumes the bound handles
//! in the same order that [`Parameterized::parameters`] lists them.

use rand::Rng;

use crate::error::Result;
use crate::tape::{Activation, Tape, Var};
use crate::tensor::Tensor;

pub trait Parameterized {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }
}

/// Parameter handles bound on a tape, consumed in order.
#[derive(Debug)]
pub struct Bound<'a> {
    vars: &'a [Var],
    next: usize,
}

impl<'a> Bound<'a> {
    pub fn new(vars: &'a [Var]) -> Self {
        Self { vars, next: 0 }
    }

    fn take(&mut self) -> Var {
        let v = self.vars[self.next];
        self.next += 1;
        v
    }
}

pub fn bind<P: Parameterized + ?Sized>(tape: &mut Tape, model: &P) -> Vec<Var> {
    model.parameters().into_iter().map(|t| tape.leaf(t.clone())).collect()
}

/// Collects gradients for bound parameters, zero-filled where nothing flowed.
pub fn collect_grads(grads: &crate::tape::Gradients, tape: &Tape, vars: &[Var]) -> Vec<Tensor> {
    vars.iter()
        .map(|&v| grads.get_or_zeros(v, tape.value(v).shape()))
        .collect()
}

/// `x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            weight: Tensor::glorot(inputs, outputs, rng),
            bias: bias.then(|| Tensor::zeros(1, outputs)),
        }
    }

    pub fn zeroed(inputs: usize, outputs: usize, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros(inputs, outputs),
            bias: bias.then(|| Tensor::zeros(1, outputs)),
        }
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, tape: &mut Tape, params: &mut Bound, x: Var) -> Result<Var> {
        let w = params.take();
        let out = tape.matmul(x, w)?;
        match self.bias {
            Some(_) => {
                let b = params.take();
                tape.add_row(out, b)
            }
            None => Ok(out),
        }
    }
}

impl Parameterized for Linear {
    fn parameters(&self) -> Vec<&Tensor> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// Graph convolution `f(Â X W)` with `Â` the symmetrically normalized
/// adjacency including self-loops. No bias.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayer {
    pub weight: Tensor,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            weight: Tensor::glorot(inputs, outputs, rng),
            activation,
        }
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, tape: &mut Tape, params: &mut Bound, adjacency: Var, x: Var) -> Result<Var> {
        let w = params.take();
        let xw = tape.matmul(x, w)?;
        let agg = tape.matmul(adjacency, xw)?;
        Ok(tape.activation(agg, self.activation))
    }
}

impl Parameterized for GcnLayer {
    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.weight]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight]
    }
}
