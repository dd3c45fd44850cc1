//! Losses and image-quality metrics.
//!
//! Graph-building functions take `Var`s and stay differentiable; the
//! `*_value` helpers and [`psnr`]/[`ssim`] work on plain tensors.

mod adversarial;
mod composite;
mod gradient;
mod metrics;

pub use adversarial::{adversarial_loss, critic_loss, gradient_penalty, Penalty, Stabilizer};
pub use composite::{content_loss, generator_loss, ContentLoss, GeneratorLoss, LossBreakdown, LossConfig};
pub use gradient::{
    cosine_similarity, gradient_cosine_loss, gradient_cosine_value, spatial_gradient, GradientField,
};
pub use metrics::{psnr, ssim, ssim_var, PSNR_CAP_DB, SSIM_SIGMA, SSIM_WINDOW};
