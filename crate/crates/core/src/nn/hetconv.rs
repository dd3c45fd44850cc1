//! Heterogeneous-kernel convolution.
//!
//! Each of the `F` filters sees all `M` input channels, but only `M/P` of
//! them through a full `K×K` kernel; the remaining `M − M/P` channels get a
//! `1×1` kernel. Filter `f` applies its `K×K` kernels to the channels
//! `c ≡ f (mod P)`, so consecutive filters shift the expensive kernels
//! across the input and together cover every channel.
//!
//! Execution groups filters by `f mod P`: every group shares one channel
//! subset, so it runs as one `K×K` convolution over that subset plus one
//! `1×1` convolution over the complement. The MACs executed therefore match
//! the weight count exactly.

use rand::Rng;

use super::layers::LayerKind;
use super::{Module, ParamCursor};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Cost of a HetConv layer relative to a standard `K×K` convolution:
/// `1/P + (1 − 1/P)/K²`.
pub fn het_conv_reduction(kernel: usize, part: usize) -> f64 {
    let p = part as f64;
    let k2 = (kernel * kernel) as f64;
    1.0 / p + (1.0 - 1.0 / p) / k2
}

#[derive(Clone, Debug)]
pub struct HetConv<T: Element> {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    part: usize,
    stride: usize,
    /// `[F, M/P, K, K]`; kernel `j` of filter `f` reads channel `f mod P + j·P`.
    pub kxk: Tensor<T>,
    /// `[F, M − M/P, 1, 1]`; kernel `j` reads the `j`-th channel of the complement.
    /// Absent when `P = 1`.
    pub pointwise: Option<Tensor<T>>,
    pub bias: Tensor<T>,
}

impl<T: Element> HetConv<T> {
    /// Zero-initialised layer with same padding `(K − 1)/2`.
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, part: usize, stride: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidSpec("HetConv channel counts must be positive".into()));
        }
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!("HetConv kernel must be odd, got {kernel}")));
        }
        if part == 0 || !in_channels.is_multiple_of(part) {
            return Err(Error::InvalidSpec(format!(
                "HetConv part {part} must divide input channels {in_channels}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidSpec("HetConv stride must be ≥ 1".into()));
        }
        let sub = in_channels / part;
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            part,
            stride,
            kxk: Tensor::zeros(&[out_channels, sub, kernel, kernel]),
            pointwise: (part > 1).then(|| Tensor::zeros(&[out_channels, in_channels - sub, 1, 1])),
            bias: Tensor::zeros(&[out_channels]),
        })
    }

    /// He-normal initialisation over the per-filter fan-in, scaled by `gain`.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        part: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self::zeros(in_channels, out_channels, kernel, part, stride)?;
        let std = gain * (2.0 / layer.weights_per_filter() as f64).sqrt();
        layer.kxk = Tensor::randn(layer.kxk.shape(), std, rng);
        if let Some(pw) = &mut layer.pointwise {
            *pw = Tensor::randn(pw.shape(), std, rng);
        }
        Ok(layer)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn part(&self) -> usize {
        self.part
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// `(M/P)·K² + (M − M/P)`.
    pub fn weights_per_filter(&self) -> usize {
        let sub = self.in_channels / self.part;
        sub * self.kernel * self.kernel + (self.in_channels - sub)
    }

    /// Convolution weights actually stored (bias excluded).
    pub fn weight_count(&self) -> usize {
        self.kxk.numel() + self.pointwise.as_ref().map_or(0, |t| t.numel())
    }

    /// Input channels filter `f` reads through `K×K` kernels.
    pub fn kxk_channels(&self, filter: usize) -> Vec<usize> {
        (filter % self.part..self.in_channels).step_by(self.part).collect()
    }

    /// Input channels filter `f` reads through `1×1` kernels.
    pub fn pointwise_channels(&self, filter: usize) -> Vec<usize> {
        let r = filter % self.part;
        (0..self.in_channels).filter(|c| c % self.part != r).collect()
    }

    /// The equivalent dense `[F, M, K, K]` kernel (1×1 weights at the centre tap).
    pub fn dense_weight(&self) -> Tensor<T> {
        let (m, k) = (self.in_channels, self.kernel);
        let mut w = Tensor::zeros(&[self.out_channels, m, k, k]);
        let sub = m / self.part;
        let centre = (k / 2) * k + k / 2;
        for f in 0..self.out_channels {
            for (j, c) in self.kxk_channels(f).into_iter().enumerate() {
                let src = &self.kxk.data()[(f * sub + j) * k * k..(f * sub + j + 1) * k * k];
                let dst = (f * m + c) * k * k;
                w.data_mut()[dst..dst + k * k].copy_from_slice(src);
            }
            if let Some(pw) = &self.pointwise {
                for (j, c) in self.pointwise_channels(f).into_iter().enumerate() {
                    w.data_mut()[(f * m + c) * k * k + centre] = pw.data()[f * (m - sub) + j];
                }
            }
        }
        w
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &mut ParamCursor, x: Var) -> Result<Var> {
        let wk = p.next_var()?;
        let wp = match self.pointwise {
            Some(_) => Some(p.next_var()?),
            None => None,
        };
        let b = p.next_var()?;
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::shape("het_conv", shape, &[self.out_channels, self.in_channels]));
        }
        let pad = self.padding();
        let Some(wp) = wp else {
            return g.conv2d(x, wk, Some(b), self.stride, pad);
        };
        let mut parts = Vec::with_capacity(self.part);
        for r in 0..self.part.min(self.out_channels) {
            let filters: Vec<usize> = (r..self.out_channels).step_by(self.part).collect();
            let xs = g.index_select(x, 1, &self.kxk_channels(r))?;
            let wk_r = g.index_select(wk, 0, &filters)?;
            let b_r = g.index_select(b, 0, &filters)?;
            let spatial = g.conv2d(xs, wk_r, Some(b_r), self.stride, pad)?;
            let xc = g.index_select(x, 1, &self.pointwise_channels(r))?;
            let wp_r = g.index_select(wp, 0, &filters)?;
            let point = g.conv2d(xc, wp_r, None, self.stride, 0)?;
            parts.push((g.add(spatial, point)?, filters));
        }
        g.assemble_channels(&parts, self.out_channels)
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::HetConv {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            part: self.part,
            stride: self.stride,
        }
    }
}

impl<T: Element> Module<T> for HetConv<T> {
    fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = vec![("kxk".to_string(), &self.kxk)];
        if let Some(pw) = &self.pointwise {
            v.push(("pointwise".to_string(), pw));
        }
        v.push(("bias".to_string(), &self.bias));
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.kxk];
        if let Some(pw) = &mut self.pointwise {
            v.push(pw);
        }
        v.push(&mut self.bias);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::bind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(layer: &HetConv<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let mut g = Graph::new();
        let vars = bind(&mut g, layer);
        let xv = g.constant(x.clone());
        let y = layer.forward(&mut g, &mut ParamCursor::new(&vars), xv).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn reduction_values() {
        assert_eq!(het_conv_reduction(3, 1), 1.0);
        assert!((het_conv_reduction(3, 4) - 1.0 / 3.0).abs() < 1e-15);
        assert!((het_conv_reduction(5, 2) - 0.52).abs() < 1e-15);
    }

    #[test]
    fn sixty_four_channel_layer_weight_counts() {
        let layer = HetConv::<f32>::zeros(64, 64, 3, 4, 1).unwrap();
        assert_eq!(layer.weights_per_filter(), 16 * 9 + 48);
        assert_eq!(layer.weight_count(), 12288);
        assert!((layer.weight_count() as f64 / 36864.0 - het_conv_reduction(3, 4)).abs() < 1e-15);
    }

    #[test]
    fn assignment_is_shifted() {
        let layer = HetConv::<f32>::zeros(8, 5, 3, 4, 1).unwrap();
        assert_eq!(layer.kxk_channels(0), vec![0, 4]);
        assert_eq!(layer.kxk_channels(1), vec![1, 5]);
        assert_eq!(layer.kxk_channels(4), vec![0, 4]);
        assert_eq!(layer.pointwise_channels(1), vec![0, 2, 3, 4, 6, 7]);
    }

    #[test]
    fn delta_kernel_reproduces_assigned_channel() {
        let mut layer = HetConv::<f64>::zeros(4, 4, 3, 4, 1).unwrap();
        assert_eq!(layer.kxk.shape(), &[4, 1, 3, 3]);
        assert_eq!(layer.pointwise.as_ref().unwrap().shape(), &[4, 3, 1, 1]);
        for f in 0..4 {
            layer.kxk.data_mut()[f * 9 + 4] = 1.0;
        }
        let x = Tensor::randn(&[2, 4, 5, 5], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let y = run(&layer, &x);
        assert_eq!(y, x, "filter f must copy channel f");
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(HetConv::<f32>::zeros(6, 4, 3, 4, 1).is_err());
        assert!(HetConv::<f32>::zeros(8, 4, 2, 4, 1).is_err());
        assert!(HetConv::<f32>::zeros(8, 4, 3, 0, 1).is_err());
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let layer = HetConv::<f64>::zeros(4, 4, 3, 2, 1).unwrap();
        let mut g = Graph::new();
        let vars = bind(&mut g, &layer);
        let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        assert!(layer.forward(&mut g, &mut ParamCursor::new(&vars), x).is_err());
    }
}
