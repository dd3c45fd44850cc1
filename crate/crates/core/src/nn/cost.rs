//! Exact parameter and multiply-accumulate accounting.
//!
//! Every convolution is also priced as its standard-kernel twin (a dense
//! `K×K` kernel over all input channels) so that the HetConv savings can be
//! read off per layer and in total.

use serde::Serialize;

use super::layers::{Activation, Conv2dLayer, Dense};
use super::{ConvCritic, Generator, HetConv};
use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    /// Convolution / dense weights (bias excluded).
    pub weights: u64,
    pub biases: u64,
    /// Other learnable scalars (PReLU slopes).
    pub other: u64,
    pub macs: u64,
    pub standard_weights: u64,
    pub standard_macs: u64,
}

impl LayerCost {
    pub fn params(&self) -> u64 {
        self.weights + self.biases + self.other
    }

    /// Weight ratio against the standard twin (1 for non-conv layers).
    pub fn weight_ratio(&self) -> f64 {
        if self.standard_weights == 0 {
            1.0
        } else {
            self.weights as f64 / self.standard_weights as f64
        }
    }

    pub fn mac_ratio(&self) -> f64 {
        if self.standard_macs == 0 {
            1.0
        } else {
            self.macs as f64 / self.standard_macs as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_weights: u64,
    pub total_macs: u64,
    pub standard_total_params: u64,
    pub standard_total_weights: u64,
    pub standard_total_macs: u64,
    /// Input shape the MACs refer to, if any.
    pub input_shape: Option<Vec<usize>>,
}

impl CostReport {
    fn from_layers(layers: Vec<LayerCost>, input_shape: Option<Vec<usize>>) -> Self {
        let sum = |f: &dyn Fn(&LayerCost) -> u64| layers.iter().map(f).sum::<u64>();
        Self {
            total_params: sum(&|l| l.params()),
            total_weights: sum(&|l| l.weights),
            total_macs: sum(&|l| l.macs),
            standard_total_params: sum(&|l| l.standard_weights + l.biases + l.other),
            standard_total_weights: sum(&|l| l.standard_weights),
            standard_total_macs: sum(&|l| l.standard_macs),
            layers,
            input_shape,
        }
    }

    pub fn weight_ratio(&self) -> f64 {
        self.total_weights as f64 / self.standard_total_weights as f64
    }

    pub fn mac_ratio(&self) -> f64 {
        if self.standard_total_macs == 0 {
            return 1.0;
        }
        self.total_macs as f64 / self.standard_total_macs as f64
    }

    /// The same report with every convolution replaced by its standard twin.
    pub fn standard_twin(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerCost {
                kind: if l.kind == "hetconv" { "conv" } else { l.kind },
                weights: l.standard_weights,
                macs: l.standard_macs,
                ..l.clone()
            })
            .collect();
        Self::from_layers(layers, self.input_shape.clone())
    }
}

/// Networks that can price themselves.
pub trait CostModel {
    /// Per-layer costs for one `h×w` input image.
    fn layer_costs(&self, h: usize, w: usize) -> Result<Vec<LayerCost>>;
    fn nominal_input(&self) -> (usize, usize);
}

fn conv_cost<T: Element>(name: String, c: &Conv2dLayer<T>, h: usize, w: usize) -> Result<(LayerCost, usize, usize)> {
    let k = c.kernel();
    let out = |len: usize| -> Result<usize> {
        let padded = len + 2 * c.padding;
        if padded < k || !(padded - k).is_multiple_of(c.stride) {
            return Err(Error::invalid("count_flops", format!("{name}: non-integer output extent")));
        }
        Ok((padded - k) / c.stride + 1)
    };
    let (oh, ow) = (out(h)?, out(w)?);
    let weights = c.weight.numel() as u64;
    let macs = weights * (oh * ow) as u64;
    Ok((
        LayerCost {
            name,
            kind: "conv",
            weights,
            biases: c.bias.as_ref().map_or(0, |b| b.numel() as u64),
            other: 0,
            macs,
            standard_weights: weights,
            standard_macs: macs,
        },
        oh,
        ow,
    ))
}

fn het_cost<T: Element>(name: String, c: &HetConv<T>, h: usize, w: usize) -> (LayerCost, usize, usize) {
    let (oh, ow) = ((h - 1) / c.stride() + 1, (w - 1) / c.stride() + 1);
    let weights = c.weight_count() as u64;
    let standard = (c.in_channels() * c.out_channels() * c.kernel() * c.kernel()) as u64;
    let plane = (oh * ow) as u64;
    (
        LayerCost {
            name,
            kind: "hetconv",
            weights,
            biases: c.bias.numel() as u64,
            other: 0,
            macs: weights * plane,
            standard_weights: standard,
            standard_macs: standard * plane,
        },
        oh,
        ow,
    )
}

fn act_cost<T: Element>(name: String, a: &Activation<T>) -> Option<LayerCost> {
    match a {
        Activation::PRelu(t) => Some(LayerCost {
            name,
            kind: "prelu",
            weights: 0,
            biases: 0,
            other: t.numel() as u64,
            macs: 0,
            standard_weights: 0,
            standard_macs: 0,
        }),
        _ => None,
    }
}

fn dense_cost<T: Element>(name: String, d: &Dense<T>) -> LayerCost {
    let weights = d.weight.numel() as u64;
    LayerCost {
        name,
        kind: "dense",
        weights,
        biases: d.bias.numel() as u64,
        other: 0,
        macs: weights,
        standard_weights: weights,
        standard_macs: weights,
    }
}

impl<T: Element> CostModel for Generator<T> {
    fn layer_costs(&self, h: usize, w: usize) -> Result<Vec<LayerCost>> {
        let mut out = Vec::new();
        let (c, h, w) = conv_cost("head".into(), &self.head, h, w)?;
        out.push(c);
        out.extend(act_cost("head_act".into(), &self.head_act));
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(het_cost(format!("blocks.{i}.conv1"), &b.conv1, h, w).0);
            out.extend(act_cost(format!("blocks.{i}.act"), &b.act));
            out.push(het_cost(format!("blocks.{i}.conv2"), &b.conv2, h, w).0);
        }
        out.push(het_cost("post".into(), &self.post, h, w).0);
        let (mut h, mut w) = (h, w);
        for (i, s) in self.upscale.iter().enumerate() {
            let (c, oh, ow) = conv_cost(format!("upscale.{i}.conv"), &s.conv, h, w)?;
            out.push(c);
            out.extend(act_cost(format!("upscale.{i}.act"), &s.act));
            h = oh * s.factor;
            w = ow * s.factor;
        }
        out.push(conv_cost("tail".into(), &self.tail, h, w)?.0);
        Ok(out)
    }

    fn nominal_input(&self) -> (usize, usize) {
        (24, 24)
    }
}

impl<T: Element> CostModel for ConvCritic<T> {
    fn layer_costs(&self, h: usize, w: usize) -> Result<Vec<LayerCost>> {
        let mut out = Vec::new();
        let (mut h, mut w) = (h, w);
        for (i, conv) in self.convs.iter().enumerate() {
            let (c, oh, ow) = conv_cost(format!("convs.{i}"), conv, h, w)?;
            out.push(c);
            (h, w) = (oh, ow);
        }
        out.push(dense_cost("head".into(), &self.head));
        Ok(out)
    }

    fn nominal_input(&self) -> (usize, usize) {
        (self.spec().input_size, self.spec().input_size)
    }
}

impl<T: Element> CostModel for HetConv<T> {
    fn layer_costs(&self, h: usize, w: usize) -> Result<Vec<LayerCost>> {
        Ok(vec![het_cost("hetconv".into(), self, h, w).0])
    }

    fn nominal_input(&self) -> (usize, usize) {
        (1, 1)
    }
}

/// Exact parameter counts; MAC fields are priced at the network's nominal input.
pub fn count_parameters<N: CostModel + ?Sized>(net: &N) -> CostReport {
    let (h, w) = net.nominal_input();
    let layers = net.layer_costs(h, w).unwrap_or_default();
    CostReport::from_layers(layers, None)
}

/// Parameter counts plus forward MACs for a `[N, C, H, W]` (or `[C, H, W]`) input.
pub fn count_flops<N: CostModel + ?Sized>(net: &N, input_shape: &[usize]) -> Result<CostReport> {
    let (n, h, w) = match *input_shape {
        [n, _, h, w] => (n, h, w),
        [_, h, w] => (1, h, w),
        _ => return Err(Error::invalid("count_flops", format!("bad input shape {input_shape:?}"))),
    };
    let mut layers = net.layer_costs(h, w)?;
    for l in &mut layers {
        l.macs *= n as u64;
        l.standard_macs *= n as u64;
    }
    Ok(CostReport::from_layers(layers, Some(input_shape.to_vec())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::GeneratorSpec;
    use crate::nn::het_conv_reduction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_conv_param_count() {
        let c = Conv2dLayer::<f32>::new(64, 64, 3, 1, 1, false, &mut ChaCha8Rng::seed_from_u64(0));
        let (cost, _, _) = conv_cost("c".into(), &c, 8, 8).unwrap();
        assert_eq!(cost.params(), 36864);
    }

    #[test]
    fn hetconv_twin_ratio() {
        let c = HetConv::<f32>::zeros(64, 64, 3, 4, 1).unwrap();
        let r = count_parameters(&c);
        assert_eq!(r.total_weights, 12288);
        assert_eq!(r.standard_total_weights, 36864);
        assert!((r.weight_ratio() - het_conv_reduction(3, 4)).abs() < 1e-15);
    }

    #[test]
    fn totals_are_sums() {
        let g = Generator::<f32>::new(&GeneratorSpec::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = count_flops(&g, &[2, 3, 24, 24]).unwrap();
        assert_eq!(r.total_params, r.layers.iter().map(|l| l.params()).sum::<u64>());
        assert_eq!(r.total_macs, r.layers.iter().map(|l| l.macs).sum::<u64>());
        use crate::nn::Module;
        assert_eq!(r.total_params as usize, g.parameter_count());
    }
}
