use rand::Rng;
use serde::Serialize;

use super::{Module, ParamCursor};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Structural description of one layer, for introspection.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    HetConv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        part: usize,
        stride: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    PRelu,
    LeakyRelu(f64),
    Relu,
    PixelShuffle(usize),
    ResidualAdd,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
}

/// Standard convolution with an optional bias.
#[derive(Clone, Debug)]
pub struct Conv2dLayer<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> Conv2dLayer<T> {
    /// He-normal weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let weight = Tensor::randn(&[out_channels, in_channels, kernel, kernel], (2.0 / fan_in).sqrt(), rng);
        Self {
            weight,
            bias: bias.then(|| Tensor::zeros(&[out_channels])),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &mut ParamCursor, x: Var) -> Result<Var> {
        let w = p.next_var()?;
        let b = match self.bias {
            Some(_) => Some(p.next_var()?),
            None => None,
        };
        g.conv2d(x, w, b, self.stride, self.padding)
    }

    /// Forward plus the directional derivative along input tangent `dx`.
    pub fn forward_tangent(&self, g: &mut Graph<T>, p: &mut ParamCursor, x: Var, dx: Var) -> Result<(Var, Var)> {
        let w = p.next_var()?;
        let b = match self.bias {
            Some(_) => Some(p.next_var()?),
            None => None,
        };
        let y = g.conv2d(x, w, b, self.stride, self.padding)?;
        let dy = g.conv2d(dx, w, None, self.stride, self.padding)?;
        Ok((y, dy))
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::Conv {
            in_channels: self.in_channels(),
            out_channels: self.out_channels(),
            kernel: self.kernel(),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

impl<T: Element> Module<T> for Conv2dLayer<T> {
    fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = vec![("weight".to_string(), &self.weight)];
        if let Some(b) = &self.bias {
            v.push(("bias".to_string(), b));
        }
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

/// Fully connected layer `y = x·Wᵀ + b`.
#[derive(Clone, Debug)]
pub struct Dense<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::randn(&[outputs, inputs], (1.0 / inputs as f64).sqrt(), rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &mut ParamCursor, x: Var) -> Result<Var> {
        let w = p.next_var()?;
        let b = p.next_var()?;
        g.linear(x, w, Some(b))
    }

    pub fn forward_tangent(&self, g: &mut Graph<T>, p: &mut ParamCursor, x: Var, dx: Var) -> Result<(Var, Var)> {
        let w = p.next_var()?;
        let b = p.next_var()?;
        let y = g.linear(x, w, Some(b))?;
        let dy = g.linear(dx, w, None)?;
        Ok((y, dy))
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::Dense {
            inputs: self.weight.shape()[1],
            outputs: self.weight.shape()[0],
        }
    }
}

impl<T: Element> Module<T> for Dense<T> {
    fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Pointwise nonlinearity. PReLU carries one learnable slope per layer.
#[derive(Clone, Debug)]
pub enum Activation<T: Element> {
    PRelu(Tensor<T>),
    Leaky(f64),
    Relu,
}

impl<T: Element> Activation<T> {
    pub fn forward(&self, g: &mut Graph<T>, p: &mut ParamCursor, x: Var) -> Result<Var> {
        match self {
            Activation::PRelu(_) => {
                let a = p.next_var()?;
                g.prelu(x, a)
            }
            Activation::Leaky(s) => g.leaky_relu(x, T::from_f64(*s)),
            Activation::Relu => g.relu(x),
        }
    }

    /// Forward plus tangent; the tangent is `dx` scaled by the local slope.
    pub fn forward_tangent(&self, g: &mut Graph<T>, p: &mut ParamCursor, x: Var, dx: Var) -> Result<(Var, Var)> {
        let slope = match self {
            Activation::PRelu(_) => {
                return Err(Error::invalid(
                    "forward_tangent",
                    "PReLU tangents are not supported; critics use fixed-slope activations",
                ))
            }
            Activation::Leaky(s) => T::from_f64(*s),
            Activation::Relu => T::zero(),
        };
        let y = self.forward(g, p, x)?;
        let mask = g.value(x).map(|v| if v >= T::zero() { T::one() } else { slope });
        let mask = g.constant(mask);
        let dy = g.mul(dx, mask)?;
        Ok((y, dy))
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Activation::PRelu(_) => LayerKind::PRelu,
            Activation::Leaky(s) => LayerKind::LeakyRelu(*s),
            Activation::Relu => LayerKind::Relu,
        }
    }

    pub fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            Activation::PRelu(a) => vec![("slope".into(), a)],
            _ => Vec::new(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Activation::PRelu(a) => vec![a],
            _ => Vec::new(),
        }
    }
}
