use rand::Rng;

use super::layers::{Activation, LayerInfo, LayerKind};
use super::{prefixed, HetConv, Module, ParamCursor};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// `x + conv2(act(conv1(x)))` with identity skip.
#[derive(Clone, Debug)]
pub struct HetResidualBlock<T: Element> {
    pub conv1: HetConv<T>,
    pub act: Activation<T>,
    pub conv2: HetConv<T>,
}

impl<T: Element> HetResidualBlock<T> {
    /// Rejects inner layers that would change the tensor shape.
    pub fn from_layers(conv1: HetConv<T>, act: Activation<T>, conv2: HetConv<T>) -> Result<Self> {
        let c = conv1.in_channels();
        let preserving = |l: &HetConv<T>| l.stride() == 1 && l.in_channels() == c && l.out_channels() == c;
        if !preserving(&conv1) || !preserving(&conv2) {
            return Err(Error::InvalidSpec(
                "HetResidual inner layers must keep channels and use stride 1".into(),
            ));
        }
        Ok(Self { conv1, act, conv2 })
    }

    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        kernel: usize,
        part: usize,
        act: Activation<T>,
        second_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let conv1 = HetConv::new(channels, channels, kernel, part, 1, 1.0, rng)?;
        let conv2 = HetConv::new(channels, channels, kernel, part, 1, second_gain, rng)?;
        Self::from_layers(conv1, act, conv2)
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &mut ParamCursor, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, p, x)?;
        let h = self.act.forward(g, p, h)?;
        let h = self.conv2.forward(g, p, h)?;
        g.add(h, x)
    }

    pub fn describe(&self, prefix: &str) -> Vec<LayerInfo> {
        vec![
            LayerInfo {
                name: format!("{prefix}.conv1"),
                kind: self.conv1.kind(),
            },
            LayerInfo {
                name: format!("{prefix}.act"),
                kind: self.act.kind(),
            },
            LayerInfo {
                name: format!("{prefix}.conv2"),
                kind: self.conv2.kind(),
            },
            LayerInfo {
                name: format!("{prefix}.skip"),
                kind: LayerKind::ResidualAdd,
            },
        ]
    }
}

impl<T: Element> Module<T> for HetResidualBlock<T> {
    fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = prefixed("conv1", self.conv1.named_parameters());
        v.extend(prefixed("act", self.act.named_parameters()));
        v.extend(prefixed("conv2", self.conv2.named_parameters()));
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.conv1.parameters_mut();
        v.extend(self.act.parameters_mut());
        v.extend(self.conv2.parameters_mut());
        v
    }
}
