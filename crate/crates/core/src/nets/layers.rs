use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{Gradients, Graph, Tensor, Var};

/// Anything that owns trainable tensors in a fixed, named order.
pub trait Module {
    type Bound: Bound;

    /// Records every parameter on `g`, as trainable leaves or as constants.
    fn bind(&self, g: &mut Graph, trainable: bool) -> Self::Bound;

    /// Handles over leaves already on a graph, given in parameter order.
    fn rebind(&self, vars: &[Var]) -> Self::Bound;

    fn named_params(&self) -> Vec<(String, &Tensor)>;

    /// Same order as [`Module::named_params`] and [`Bound::vars`].
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
}

/// Graph handles of a bound [`Module`].
pub trait Bound {
    fn vars(&self) -> Vec<Var>;

    /// Gradients of the bound parameters, in parameter order.
    fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars().into_iter().map(|v| grads.wrt(v)).collect()
    }
}

pub(crate) fn bind_tensor(g: &mut Graph, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        g.param(t)
    } else {
        g.constant(t)
    }
}

/// Fully connected layer `x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Linear {
    /// Weights drawn from `N(0, 2 / fan_in)`, zero bias.
    pub fn scaled_normal(fan_in: usize, fan_out: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], data).expect("weight shape"),
            bias: with_bias.then(|| Tensor::zeros(vec![fan_out])),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, with_bias: bool) -> Self {
        Linear {
            weight: Tensor::zeros(vec![fan_in, fan_out]),
            bias: with_bias.then(|| Tensor::zeros(vec![fan_out])),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub(crate) fn named_into<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b));
        }
    }

    pub(crate) fn rebind_from(&self, vars: &mut impl Iterator<Item = Var>) -> LinearVars {
        LinearVars {
            weight: vars.next().expect("missing weight handle"),
            bias: self.bias.as_ref().map(|_| vars.next().expect("missing bias handle")),
        }
    }

    pub(crate) fn params_into<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }
}

impl Module for Linear {
    type Bound = LinearVars;

    fn bind(&self, g: &mut Graph, trainable: bool) -> LinearVars {
        LinearVars {
            weight: bind_tensor(g, &self.weight, trainable),
            bias: self.bias.as_ref().map(|b| bind_tensor(g, b, trainable)),
        }
    }

    fn rebind(&self, vars: &[Var]) -> LinearVars {
        let mut it = vars.iter().copied();
        self.rebind_from(&mut it)
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.named_into("linear", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.params_into(&mut out);
        out
    }
}

impl LinearVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.weight)?;
        match self.bias {
            Some(b) => g.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub(crate) fn vars_into(&self, out: &mut Vec<Var>) {
        out.push(self.weight);
        out.extend(self.bias);
    }
}

impl Bound for LinearVars {
    fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.vars_into(&mut out);
        out
    }
}

impl<T: Bound> Bound for Vec<T> {
    fn vars(&self) -> Vec<Var> {
        self.iter().flat_map(|b| b.vars()).collect()
    }
}
