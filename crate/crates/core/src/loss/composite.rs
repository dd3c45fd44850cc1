//! The composite generator objective `l_X + λ·l_Gen + μ·(1 − F_cos)`.

use serde::{Deserialize, Serialize};

use super::adversarial::{adversarial_loss, Stabilizer};
use super::gradient::gradient_cosine_loss;
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Var};

/// Pixel-space reconstruction term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContentLoss {
    #[default]
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Adversarial weight λ.
    pub lambda: f64,
    /// Gradient-cosine weight μ.
    pub mu: f64,
    pub content_loss: ContentLoss,
    pub wgan_stabilizer: Stabilizer,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.001,
            mu: 0.001,
            content_loss: ContentLoss::Mse,
            wgan_stabilizer: Stabilizer::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be finite and non-negative (lambda {}, mu {})",
                self.lambda, self.mu
            )));
        }
        self.wgan_stabilizer.validate()
    }
}

/// Mean squared error over all elements.
pub fn content_loss<T: Element>(g: &mut Graph<T>, sr: Var, hr: Var) -> Result<Var> {
    if g.shape(sr) != g.shape(hr) {
        return Err(Error::shape("content_loss", g.shape(sr), g.shape(hr)));
    }
    let d = g.sub(sr, hr)?;
    let d2 = g.square(d)?;
    g.mean(d2)
}

/// Graph handles of the generator objective and its parts.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: Var,
    pub content: Var,
    pub adversarial: Var,
    pub fcos: Var,
}

/// Plain values of the generator objective's terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub content: f64,
    pub adversarial: f64,
    pub fcos: f64,
}

impl GeneratorLoss {
    pub fn breakdown<T: Element>(&self, g: &Graph<T>) -> LossBreakdown {
        LossBreakdown {
            content: g.value(self.content).item().as_f64(),
            adversarial: g.value(self.adversarial).item().as_f64(),
            fcos: g.value(self.fcos).item().as_f64(),
        }
    }
}

/// `content + λ·(−mean(fake)) + μ·(1 − F_cos(sr, hr))`.
pub fn generator_loss<T: Element>(
    g: &mut Graph<T>,
    sr: Var,
    hr: Var,
    fake_scores: Var,
    cfg: &LossConfig,
) -> Result<GeneratorLoss> {
    let content = match cfg.content_loss {
        ContentLoss::Mse => content_loss(g, sr, hr)?,
    };
    let adversarial = adversarial_loss(g, fake_scores)?;
    let fcos = gradient_cosine_loss(g, sr, hr)?;
    let adv = g.mul_scalar(adversarial, T::from_f64(cfg.lambda))?;
    let neg = g.mul_scalar(fcos, T::from_f64(-cfg.mu))?;
    let edge = g.add_scalar(neg, T::from_f64(cfg.mu))?;
    let total = g.add(content, adv)?;
    let total = g.add(total, edge)?;
    Ok(GeneratorLoss {
        total,
        content,
        adversarial,
        fcos,
    })
}
