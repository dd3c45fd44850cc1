use rand::Rng;

use super::layers::{Activation, Conv2dLayer, LayerInfo, LayerKind};
use super::spec::{ActivationKind, GeneratorSpec, GlobalSkip};
use super::{bind, bind_frozen, prefixed, HetConv, HetResidualBlock, Module, ParamCursor};
use crate::data::resample_matrix;
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

fn activation<T: Element>(kind: ActivationKind) -> Activation<T> {
    match kind {
        ActivationKind::Prelu => Activation::PRelu(Tensor::scalar(T::from_f64(0.25))),
        ActivationKind::Leaky { slope } => Activation::Leaky(slope),
        ActivationKind::Relu => Activation::Relu,
    }
}

/// One sub-pixel upscaling stage: conv to `r²·n` channels, shuffle, activation.
#[derive(Clone, Debug)]
pub struct UpscaleStage<T: Element> {
    pub conv: Conv2dLayer<T>,
    pub factor: usize,
    pub act: Activation<T>,
}

/// Differentiable (unclamped) bicubic upscaling of `[N, C, H, W]` by `r`,
/// as two fixed resampling matmuls: rows first, then columns.
fn bicubic_upscale<T: Element>(g: &mut Graph<T>, x: Var, r: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let (oh, ow) = (h * r, w * r);
    let rw = g.constant(resample_matrix(w, ow));
    let rh = g.constant(resample_matrix(h, oh));
    // [NC·H, W] · [W, oW] → [NC·H, oW]
    let rows = g.reshape(x, &[planes * h, w])?;
    let rows = g.matmul(rows, rw)?;
    // Bring H innermost: [oW, NC·H] → [oW·NC, H] · [H, oH] → [oW·NC, oH].
    let cols = g.transpose(rows)?;
    let cols = g.reshape(cols, &[ow * planes, h])?;
    let cols = g.matmul(cols, rh)?;
    // And back: [oW, NC·oH] → [NC·oH, oW].
    let cols = g.reshape(cols, &[ow, planes * oh])?;
    let out = g.transpose(cols)?;
    g.reshape(out, &[s[0], s[1], oh, ow])
}

/// ×4 super-resolution generator built from HetResidual blocks.
#[derive(Clone, Debug)]
pub struct Generator<T: Element> {
    spec: GeneratorSpec,
    pub head: Conv2dLayer<T>,
    pub head_act: Activation<T>,
    pub blocks: Vec<HetResidualBlock<T>>,
    pub post: HetConv<T>,
    pub upscale: Vec<UpscaleStage<T>>,
    pub tail: Conv2dLayer<T>,
}

impl<T: Element> Generator<T> {
    pub fn new<R: Rng + ?Sized>(spec: &GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let n = spec.channels;
        let head = Conv2dLayer::new(spec.image_channels, n, spec.head_kernel, 1, spec.head_kernel / 2, true, rng);
        let blocks = (0..spec.blocks)
            .map(|_| {
                HetResidualBlock::new(
                    n,
                    spec.kernel,
                    spec.part,
                    activation(spec.activation),
                    spec.residual_init_scale,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let post = HetConv::new(n, n, spec.kernel, spec.part, 1, 1.0, rng)?;
        let upscale = spec
            .upscale
            .iter()
            .map(|&r| UpscaleStage {
                conv: Conv2dLayer::new(n, n * r * r, 3, 1, 1, true, rng),
                factor: r,
                act: activation(spec.activation),
            })
            .collect();
        let mut tail = Conv2dLayer::new(n, spec.image_channels, spec.tail_kernel, 1, spec.tail_kernel / 2, true, rng);
        if spec.global_skip == GlobalSkip::Bicubic {
            tail.weight.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        Ok(Self {
            spec: spec.clone(),
            head,
            head_act: activation(spec.activation),
            blocks,
            post,
            upscale,
            tail,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn forward(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1] != self.spec.image_channels {
            return Err(Error::invalid(
                "generator",
                format!("expected [N, {}, H, W] input, got {shape:?}", self.spec.image_channels),
            ));
        }
        let p = &mut ParamCursor::new(params);
        let h = self.head.forward(g, p, x)?;
        let skip = self.head_act.forward(g, p, h)?;
        let mut h = skip;
        for block in &self.blocks {
            h = block.forward(g, p, h)?;
        }
        let h = self.post.forward(g, p, h)?;
        let mut h = g.add(h, skip)?;
        for stage in &self.upscale {
            h = stage.conv.forward(g, p, h)?;
            h = g.pixel_shuffle(h, stage.factor)?;
            h = stage.act.forward(g, p, h)?;
        }
        let out = self.tail.forward(g, p, h)?;
        if p.remaining() != 0 {
            return Err(Error::invalid("generator", "unused bound parameters"));
        }
        match self.spec.global_skip {
            GlobalSkip::None => Ok(out),
            GlobalSkip::Bicubic => {
                let base = bicubic_upscale(g, x, self.spec.scale())?;
                g.add(out, base)
            }
        }
    }

    /// Inference on a `[N, C, H, W]` tensor.
    pub fn infer(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params = bind_frozen(&mut g, self);
        let x = g.constant(lr.clone());
        let y = self.forward(&mut g, &params, x)?;
        Ok(g.value(y).clone())
    }

    /// Forward and backward of `loss_fn(sr)`, accumulating parameter gradients.
    pub fn accumulate_gradients<F>(&mut self, lr: &Tensor<T>, loss_fn: F) -> Result<T>
    where
        F: FnOnce(&mut Graph<T>, Var) -> Result<Var>,
    {
        let mut g = Graph::new();
        let params = bind(&mut g, &*self);
        let x = g.constant(lr.clone());
        let y = self.forward(&mut g, &params, x)?;
        let loss = loss_fn(&mut g, y)?;
        let value = g.value(loss).item();
        g.backward(loss)?;
        super::collect_grads(&g, &params, self)?;
        Ok(value)
    }

    pub fn describe(&self) -> Vec<LayerInfo> {
        let mut v = vec![
            LayerInfo {
                name: "head".into(),
                kind: self.head.kind(),
            },
            LayerInfo {
                name: "head_act".into(),
                kind: self.head_act.kind(),
            },
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(b.describe(&format!("blocks.{i}")));
        }
        v.push(LayerInfo {
            name: "post".into(),
            kind: self.post.kind(),
        });
        v.push(LayerInfo {
            name: "long_skip".into(),
            kind: LayerKind::ResidualAdd,
        });
        for (i, s) in self.upscale.iter().enumerate() {
            v.push(LayerInfo {
                name: format!("upscale.{i}.conv"),
                kind: s.conv.kind(),
            });
            v.push(LayerInfo {
                name: format!("upscale.{i}.shuffle"),
                kind: LayerKind::PixelShuffle(s.factor),
            });
            v.push(LayerInfo {
                name: format!("upscale.{i}.act"),
                kind: s.act.kind(),
            });
        }
        v.push(LayerInfo {
            name: "tail".into(),
            kind: self.tail.kind(),
        });
        v
    }
}

impl<T: Element> Module<T> for Generator<T> {
    fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = prefixed("head", self.head.named_parameters());
        v.extend(prefixed("head_act", self.head_act.named_parameters()));
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(prefixed(&format!("blocks.{i}"), b.named_parameters()));
        }
        v.extend(prefixed("post", self.post.named_parameters()));
        for (i, s) in self.upscale.iter().enumerate() {
            v.extend(prefixed(&format!("upscale.{i}.conv"), s.conv.named_parameters()));
            v.extend(prefixed(&format!("upscale.{i}.act"), s.act.named_parameters()));
        }
        v.extend(prefixed("tail", self.tail.named_parameters()));
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.head.parameters_mut();
        v.extend(self.head_act.parameters_mut());
        for b in &mut self.blocks {
            v.extend(b.parameters_mut());
        }
        v.extend(self.post.parameters_mut());
        for s in &mut self.upscale {
            v.extend(s.conv.parameters_mut());
            v.extend(s.act.parameters_mut());
        }
        v.extend(self.tail.parameters_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{count_parameters, het_conv_reduction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_spec() -> GeneratorSpec {
        GeneratorSpec {
            channels: 8,
            blocks: 2,
            head_kernel: 3,
            tail_kernel: 3,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn default_generator_upscales_by_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::<f32>::new(&GeneratorSpec::default(), &mut rng).unwrap();
        let y = g.infer(&Tensor::uniform(&[1, 3, 24, 24], 0.0, 1.0, &mut rng)).unwrap();
        assert_eq!(y.shape(), &[1, 3, 96, 96]);
        assert!(y.all_finite());
    }

    #[test]
    fn output_shape_for_non_square_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::<f64>::new(&toy_spec(), &mut rng).unwrap();
        let y = g.infer(&Tensor::uniform(&[2, 3, 5, 7], 0.0, 1.0, &mut rng)).unwrap();
        assert_eq!(y.shape(), &[2, 3, 20, 28]);
    }

    #[test]
    fn every_hetconv_layer_has_the_reduction_ratio() {
        let g = Generator::<f32>::new(&GeneratorSpec::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let report = count_parameters(&g);
        let het: Vec<_> = report.layers.iter().filter(|l| l.kind == "hetconv").collect();
        assert_eq!(het.len(), 2 * 16 + 1);
        for l in het {
            assert!((l.weight_ratio() - het_conv_reduction(3, 4)).abs() < 1e-15, "{}", l.name);
        }
        assert!(report.weight_ratio() <= 0.48, "ratio {}", report.weight_ratio());
    }

    #[test]
    fn no_normalisation_layers() {
        let g = Generator::<f32>::new(&toy_spec(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let names: Vec<_> = g.describe().into_iter().map(|l| l.name).collect();
        assert!(names.iter().all(|n| !n.contains("norm")));
        assert_eq!(g.parameters().len(), g.named_parameters().len());
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = GeneratorSpec {
            upscale: vec![2],
            ..toy_spec()
        };
        assert!(Generator::<f32>::new(&spec, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn bicubic_skip_starts_at_bicubic() {
        let spec = GeneratorSpec {
            global_skip: GlobalSkip::Bicubic,
            ..toy_spec()
        };
        let g = Generator::<f64>::new(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = Tensor::<f64>::from_fn(&[2, 3, 5, 7], |i| ((i * 37) % 23) as f64 / 23.0);
        let y = g.infer(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 20, 28]);
        for n in 0..2 {
            let plane = 3 * 5 * 7;
            let xs = Tensor::new(&[3, 5, 7], x.data()[n * plane..(n + 1) * plane].to_vec()).unwrap();
            let want = crate::data::resize_bicubic(&xs, 20, 28).unwrap();
            let got = &y.data()[n * want.numel()..(n + 1) * want.numel()];
            let diff = got.iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "sample {n}: {diff}");
        }
    }
}
