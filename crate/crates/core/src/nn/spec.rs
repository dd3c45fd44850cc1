use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Critic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ActivationKind {
    Prelu,
    Leaky { slope: f64 },
    Relu,
}

/// Optional image-space shortcut around the whole generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlobalSkip {
    /// The network output is the image.
    #[default]
    None,
    /// The network output is added to the bicubic upscale of the input, and
    /// the tail conv starts at zero so training begins at the bicubic image.
    Bicubic,
}

/// Layout of the ×4 generator.
///
/// head conv + activation → `blocks` HetResidual blocks → HetConv post-conv
/// with a long additive skip from the head → one (conv, pixel shuffle,
/// activation) stage per entry of `upscale` → tail conv to `image_channels`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub image_channels: usize,
    pub channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub part: usize,
    pub head_kernel: usize,
    pub tail_kernel: usize,
    pub upscale: Vec<usize>,
    pub activation: ActivationKind,
    /// Multiplier on the initial weights of each block's second HetConv.
    pub residual_init_scale: f64,
    pub global_skip: GlobalSkip,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            image_channels: 3,
            channels: 64,
            blocks: 16,
            kernel: 3,
            part: 4,
            head_kernel: 9,
            tail_kernel: 9,
            upscale: vec![2, 2],
            activation: ActivationKind::Prelu,
            residual_init_scale: 0.1,
            global_skip: GlobalSkip::None,
        }
    }
}

fn odd(k: usize, what: &str) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::InvalidSpec(format!("{what} must be odd and positive, got {k}")));
    }
    Ok(())
}

impl GeneratorSpec {
    pub fn scale(&self) -> usize {
        self.upscale.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_channels == 0 || self.channels == 0 {
            return Err(Error::InvalidSpec("channel counts must be positive".into()));
        }
        odd(self.kernel, "kernel")?;
        odd(self.head_kernel, "head_kernel")?;
        odd(self.tail_kernel, "tail_kernel")?;
        if self.part == 0 || !self.channels.is_multiple_of(self.part) {
            return Err(Error::InvalidSpec(format!(
                "part P = {} must divide the channel width {}",
                self.part, self.channels
            )));
        }
        if self.upscale.iter().any(|&r| r < 2) {
            return Err(Error::InvalidSpec("every upscale stage factor must be ≥ 2".into()));
        }
        if self.scale() != 4 {
            return Err(Error::InvalidSpec(format!(
                "upscale stages {:?} multiply to {}, expected 4",
                self.upscale,
                self.scale()
            )));
        }
        if !self.residual_init_scale.is_finite() || self.residual_init_scale < 0.0 {
            return Err(Error::InvalidSpec("residual_init_scale must be finite and ≥ 0".into()));
        }
        if let ActivationKind::Leaky { slope } = self.activation {
            if !slope.is_finite() {
                return Err(Error::InvalidSpec("activation slope must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Layout of the BN-free Wasserstein critic.
///
/// Layer `i` has `min(base · 2^(i/2), max)` filters; even layers are 3×3
/// stride 1, odd layers 4×4 stride 2 (both padding 1). A dense layer maps
/// the flattened features to one unbounded score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticSpec {
    pub image_channels: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub leaky_slope: f64,
    pub input_size: usize,
}

impl Default for CriticSpec {
    fn default() -> Self {
        Self {
            image_channels: 3,
            depth: 8,
            base_channels: 64,
            max_channels: 512,
            leaky_slope: 0.2,
            input_size: 96,
        }
    }
}

/// One resolved critic convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CriticLayerPlan {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl CriticSpec {
    pub fn layers(&self) -> Vec<CriticLayerPlan> {
        let mut prev = self.image_channels;
        (0..self.depth)
            .map(|i| {
                let out = (self.base_channels << (i / 2).min(30)).min(self.max_channels);
                let strided = i % 2 == 1;
                let plan = CriticLayerPlan {
                    in_channels: prev,
                    out_channels: out,
                    kernel: if strided { 4 } else { 3 },
                    stride: if strided { 2 } else { 1 },
                    padding: 1,
                };
                prev = out;
                plan
            })
            .collect()
    }

    /// Spatial extent entering the dense head.
    pub fn feature_size(&self) -> usize {
        self.input_size >> (self.depth / 2)
    }

    pub fn dense_inputs(&self) -> usize {
        let c = self.layers().last().map_or(self.image_channels, |l| l.out_channels);
        c * self.feature_size() * self.feature_size()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_channels == 0 || self.base_channels == 0 || self.max_channels == 0 {
            return Err(Error::InvalidSpec("channel counts must be positive".into()));
        }
        if self.depth == 0 {
            return Err(Error::InvalidSpec("critic depth must be ≥ 1".into()));
        }
        let strided = self.depth / 2;
        if self.input_size == 0 || strided >= usize::BITS as usize || !self.input_size.is_multiple_of(1 << strided) {
            return Err(Error::InvalidSpec(format!(
                "input size {} must be divisible by 2^{strided} for {} strided layers",
                self.input_size, strided
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::InvalidSpec("leaky slope must be finite".into()));
        }
        Ok(())
    }
}

/// Declarative description of either network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum NetworkSpec {
    Generator(GeneratorSpec),
    Critic(CriticSpec),
}

impl NetworkSpec {
    pub fn role(&self) -> Role {
        match self {
            NetworkSpec::Generator(_) => Role::Generator,
            NetworkSpec::Critic(_) => Role::Critic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NetworkSpec::Generator(s) => s.validate(),
            NetworkSpec::Critic(s) => s.validate(),
        }
    }
}
