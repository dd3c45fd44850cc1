use rand::Rng;

use super::layers::{Activation, Conv2dLayer, Dense, LayerInfo};
use super::spec::CriticSpec;
use super::{prefixed, Module, ParamCursor};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// A network mapping `[N, ...]` inputs to `[N]` unbounded scores.
///
/// `score_tangent` additionally returns the directional derivative of each
/// score along the input tangent `dx`, built from differentiable ops so that
/// it can be backpropagated into the critic's parameters. The gradient
/// penalty relies on this.
pub trait Critic<T: Element>: Module<T> {
    fn score(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var>;
    fn score_tangent(&self, g: &mut Graph<T>, params: &[Var], x: Var, dx: Var) -> Result<(Var, Var)>;
}

/// Strided convolution stack with leaky activations and a linear dense head.
/// There is no normalisation layer and no output squashing.
#[derive(Clone, Debug)]
pub struct ConvCritic<T: Element> {
    spec: CriticSpec,
    pub convs: Vec<Conv2dLayer<T>>,
    act: Activation<T>,
    pub head: Dense<T>,
}

impl<T: Element> ConvCritic<T> {
    pub fn new<R: Rng + ?Sized>(spec: &CriticSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let convs = spec
            .layers()
            .iter()
            .map(|l| Conv2dLayer::new(l.in_channels, l.out_channels, l.kernel, l.stride, l.padding, true, rng))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            convs,
            act: Activation::Leaky(spec.leaky_slope),
            head: Dense::new(spec.dense_inputs(), 1, rng),
        })
    }

    pub fn spec(&self) -> &CriticSpec {
        &self.spec
    }

    fn check_input(&self, g: &Graph<T>, x: Var) -> Result<usize> {
        let s = g.shape(x);
        let want = [self.spec.image_channels, self.spec.input_size, self.spec.input_size];
        if s.len() != 4 || s[1..] != want {
            return Err(Error::invalid(
                "critic",
                format!("expected [N, {}, {}, {}] input, got {s:?}", want[0], want[1], want[2]),
            ));
        }
        Ok(s[0])
    }

    pub fn describe(&self) -> Vec<LayerInfo> {
        let mut v = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            v.push(LayerInfo {
                name: format!("convs.{i}"),
                kind: c.kind(),
            });
            v.push(LayerInfo {
                name: format!("acts.{i}"),
                kind: self.act.kind(),
            });
        }
        v.push(LayerInfo {
            name: "head".into(),
            kind: self.head.kind(),
        });
        v
    }
}

impl<T: Element> Critic<T> for ConvCritic<T> {
    fn score(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var> {
        let n = self.check_input(g, x)?;
        let p = &mut ParamCursor::new(params);
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, p, h)?;
            h = self.act.forward(g, p, h)?;
        }
        let h = g.flatten(h)?;
        let s = self.head.forward(g, p, h)?;
        g.reshape(s, &[n])
    }

    fn score_tangent(&self, g: &mut Graph<T>, params: &[Var], x: Var, dx: Var) -> Result<(Var, Var)> {
        let n = self.check_input(g, x)?;
        if g.shape(dx) != g.shape(x) {
            return Err(Error::shape("critic tangent", g.shape(x), g.shape(dx)));
        }
        let p = &mut ParamCursor::new(params);
        let (mut h, mut dh) = (x, dx);
        for conv in &self.convs {
            (h, dh) = conv.forward_tangent(g, p, h, dh)?;
            (h, dh) = self.act.forward_tangent(g, p, h, dh)?;
        }
        let h = g.flatten(h)?;
        let dh = g.flatten(dh)?;
        let (s, ds) = self.head.forward_tangent(g, p, h, dh)?;
        Ok((g.reshape(s, &[n])?, g.reshape(ds, &[n])?))
    }
}

impl<T: Element> Module<T> for ConvCritic<T> {
    fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            v.extend(prefixed(&format!("convs.{i}"), c.named_parameters()));
        }
        v.extend(prefixed("head", self.head.named_parameters()));
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for c in &mut self.convs {
            v.extend(c.parameters_mut());
        }
        v.extend(self.head.parameters_mut());
        v
    }
}
