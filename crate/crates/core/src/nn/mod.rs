//! Network building blocks and the two networks of the adversarial pair.
//!
//! Parameters live in the modules as [`Tensor`]s. A forward pass first binds
//! them onto a [`Graph`] with [`bind`] (or [`bind_frozen`]) and then walks
//! the bound variables with a [`ParamCursor`] in declaration order.

mod cost;
mod critic;
mod generator;
mod hetconv;
mod layers;
mod residual;
mod spec;

pub use cost::{count_flops, count_parameters, CostModel, CostReport, LayerCost};
pub use critic::{ConvCritic, Critic};
pub use generator::Generator;
pub use hetconv::{het_conv_reduction, HetConv};
pub use layers::{Activation, Conv2dLayer, Dense, LayerInfo, LayerKind};
pub use residual::HetResidualBlock;
pub use spec::{ActivationKind, CriticSpec, GeneratorSpec, GlobalSkip, NetworkSpec, Role};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Anything that owns trainable tensors.
pub trait Module<T: Element> {
    /// Parameters with dotted names, in forward-consumption order.
    fn named_parameters(&self) -> Vec<(String, &Tensor<T>)>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn parameters(&self) -> Vec<&Tensor<T>> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(|t| t.zero_grad());
    }
}

pub(crate) fn prefixed<'a, T: Element>(
    prefix: &str,
    items: Vec<(String, &'a Tensor<T>)>,
) -> Vec<(String, &'a Tensor<T>)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

/// Records every parameter of `m` as a gradient-tracking leaf.
pub fn bind<T: Element, M: Module<T> + ?Sized>(g: &mut Graph<T>, m: &M) -> Vec<Var> {
    m.parameters()
        .into_iter()
        .map(|t| g.leaf(t.clone().with_requires_grad(true)))
        .collect()
}

/// Records every parameter of `m` as a constant.
pub fn bind_frozen<T: Element, M: Module<T> + ?Sized>(g: &mut Graph<T>, m: &M) -> Vec<Var> {
    m.parameters()
        .into_iter()
        .map(|t| g.constant(t.clone()))
        .collect()
}

/// Adds the gradients of the bound variables into the module's tensors.
pub fn collect_grads<T: Element, M: Module<T> + ?Sized>(g: &Graph<T>, vars: &[Var], m: &mut M) -> Result<()> {
    let params = m.parameters_mut();
    if params.len() != vars.len() {
        return Err(Error::invalid(
            "collect_grads",
            format!("{} bound variables for {} parameters", vars.len(), params.len()),
        ));
    }
    for (v, t) in vars.iter().zip(params) {
        g.accumulate_grad_into(*v, t)?;
    }
    Ok(())
}

/// Sequential reader over bound parameter variables.
pub struct ParamCursor<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl<'a> ParamCursor<'a> {
    pub fn new(vars: &'a [Var]) -> Self {
        Self { vars, pos: 0 }
    }

    pub fn next_var(&mut self) -> Result<Var> {
        let v = self
            .vars
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::invalid("forward", "ran out of bound parameters"))?;
        self.pos += 1;
        Ok(v)
    }

    pub fn remaining(&self) -> usize {
        self.vars.len() - self.pos
    }
}
