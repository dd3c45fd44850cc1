//! Adam and averaged SGD over module parameter tensors.
//!
//! Optimisers read the gradient accumulated on each tensor and leave the
//! accumulator untouched; callers zero it between steps. A step whose
//! gradients contain a non-finite value is skipped entirely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    /// SGD with a running arithmetic average of the iterates from step `t0`.
    /// Step size `lr / (1 + decay·lr·t)^alpha`.
    Asgd {
        lr: f64,
        decay: f64,
        alpha: f64,
        t0: u64,
    },
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        Self::Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn asgd() -> Self {
        Self::Asgd {
            lr: 1e-4,
            decay: 0.0,
            alpha: 0.75,
            t0: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::Adam { lr, .. } | Self::Asgd { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
            Self::Asgd { lr, decay, alpha, .. } => lr > 0.0 && decay >= 0.0 && alpha >= 0.0,
        };
        if ok && self.lr().is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Result of one optimiser step.
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Applied,
    Skipped(String),
}

fn grads_finite<T: Element>(params: &[&mut Tensor<T>]) -> bool {
    params
        .iter()
        .all(|p| p.grad().is_none_or(|g| g.iter().all(|v| v.is_finite())))
}

fn check_shapes<T: Element>(params: &[&mut Tensor<T>], slots: &[Tensor<T>]) -> Result<()> {
    if params.len() != slots.len() || params.iter().zip(slots).any(|(p, s)| p.shape() != s.shape()) {
        return Err(Error::invalid("optimizer", "parameter list does not match optimizer state"));
    }
    Ok(())
}

/// Optimiser state for one network.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState<T: Element> {
    Adam {
        config: OptimizerConfig,
        step: u64,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
    },
    Asgd {
        config: OptimizerConfig,
        step: u64,
        /// Running averages of the iterates (initialised to the start point).
        average: Vec<Tensor<T>>,
    },
}

impl<T: Element> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, params: &[&Tensor<T>]) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        Ok(match config {
            OptimizerConfig::Adam { .. } => Self::Adam {
                config,
                step: 0,
                m: zeros(),
                v: zeros(),
            },
            OptimizerConfig::Asgd { .. } => Self::Asgd {
                config,
                step: 0,
                average: params.iter().map(|p| Tensor::new(p.shape(), p.data().to_vec())).collect::<Result<_>>()?,
            },
        })
    }

    pub fn config(&self) -> OptimizerConfig {
        match self {
            Self::Adam { config, .. } | Self::Asgd { config, .. } => *config,
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            Self::Adam { step, .. } | Self::Asgd { step, .. } => *step,
        }
    }

    /// Updates `params` in place from their accumulated gradients (missing
    /// gradients count as zero).
    pub fn step(&mut self, mut params: Vec<&mut Tensor<T>>) -> Result<StepOutcome> {
        if !grads_finite(&params) {
            return Ok(StepOutcome::Skipped("non-finite gradient".into()));
        }
        match self {
            Self::Adam { config, step, m, v } => {
                check_shapes(&params, m)?;
                let OptimizerConfig::Adam { lr, beta1, beta2, eps } = *config else {
                    unreachable!("Adam state always holds an Adam config")
                };
                *step += 1;
                let t = *step as i32;
                let c1 = T::from_f64(1.0 - beta1.powi(t));
                let c2 = T::from_f64(1.0 - beta2.powi(t));
                let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
                let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));
                for ((p, m), v) in params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    let g = p.grad().map_or_else(|| vec![T::zero(); p.numel()], |g| g.to_vec());
                    let (md, vd) = (m.data_mut(), v.data_mut());
                    for (i, w) in p.data_mut().iter_mut().enumerate() {
                        md[i] = b1 * md[i] + (T::one() - b1) * g[i];
                        vd[i] = b2 * vd[i] + (T::one() - b2) * g[i] * g[i];
                        *w = *w - lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + eps);
                    }
                }
            }
            Self::Asgd { config, step, average } => {
                check_shapes(&params, average)?;
                let OptimizerConfig::Asgd { lr, decay, alpha, t0 } = *config else {
                    unreachable!("ASGD state always holds an ASGD config")
                };
                let eta = T::from_f64(lr / (1.0 + decay * lr * *step as f64).powf(alpha));
                *step += 1;
                let mu = (*step > t0).then(|| T::from_f64(1.0 / (*step - t0) as f64));
                for (p, avg) in params.iter_mut().zip(average.iter_mut()) {
                    if let Some(g) = p.grad().map(|g| g.to_vec()) {
                        for (w, gi) in p.data_mut().iter_mut().zip(g) {
                            *w = *w - eta * gi;
                        }
                    }
                    if let Some(mu) = mu {
                        for (a, &w) in avg.data_mut().iter_mut().zip(p.data()) {
                            *a = *a + (w - *a) * mu;
                        }
                    }
                }
            }
        }
        Ok(StepOutcome::Applied)
    }

    /// Averaged iterates (ASGD only).
    pub fn averaged(&self) -> Option<&[Tensor<T>]> {
        match self {
            Self::Asgd { average, .. } => Some(average),
            Self::Adam { .. } => None,
        }
    }

    /// State tensors with stable names, for checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            Self::Adam { m, v, .. } => m
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("m.{i}"), t))
                .chain(v.iter().enumerate().map(|(i, t)| (format!("v.{i}"), t)))
                .collect(),
            Self::Asgd { average, .. } => average.iter().enumerate().map(|(i, t)| (format!("avg.{i}"), t)).collect(),
        }
    }

    /// Rebuilds a state from checkpointed pieces.
    pub fn restore(config: OptimizerConfig, step: u64, mut tensors: Vec<Tensor<T>>) -> Result<Self> {
        Ok(match config {
            OptimizerConfig::Adam { .. } => {
                if !tensors.len().is_multiple_of(2) {
                    return Err(Error::invalid("optimizer restore", "Adam needs paired moments"));
                }
                let v = tensors.split_off(tensors.len() / 2);
                Self::Adam {
                    config,
                    step,
                    m: tensors,
                    v,
                }
            }
            OptimizerConfig::Asgd { .. } => Self::Asgd {
                config,
                step,
                average: tensors,
            },
        })
    }
}

/// Clamps every parameter to `[−bound, bound]`.
pub fn clip_weights<T: Element>(params: Vec<&mut Tensor<T>>, bound: f64) {
    let (lo, hi) = (T::from_f64(-bound), T::from_f64(bound));
    for p in params {
        p.data_mut().iter_mut().for_each(|w| *w = w.max(lo).min(hi));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grad: Option<&[f64]>) -> Tensor<f64> {
        let mut t = Tensor::new(&[values.len()], values.to_vec()).unwrap();
        if let Some(g) = grad {
            t.accumulate_grad(g).unwrap();
        }
        t
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut p = param(&[1.0, -2.0], Some(&[0.0, 0.0]));
        let mut opt = OptimizerState::new(OptimizerConfig::adam(), &[&p]).unwrap();
        assert_eq!(opt.step(vec![&mut p]).unwrap(), StepOutcome::Applied);
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = param(&[1.0, 1.0], Some(&[3.0, -0.5]));
        let mut opt = OptimizerState::new(OptimizerConfig::adam(), &[&p]).unwrap();
        opt.step(vec![&mut p]).unwrap();
        assert!((p.data()[0] - (1.0 - 1e-4)).abs() < 1e-10);
        assert!((p.data()[1] - (1.0 + 1e-4)).abs() < 1e-10);
    }

    #[test]
    fn non_finite_grad_skips() {
        let mut p = param(&[1.0], Some(&[f64::NAN]));
        let mut opt = OptimizerState::new(OptimizerConfig::adam(), &[&p]).unwrap();
        assert!(matches!(opt.step(vec![&mut p]).unwrap(), StepOutcome::Skipped(_)));
        assert_eq!(p.data(), &[1.0]);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn asgd_constant_gradient() {
        let g = [0.5, -2.0];
        let mut p = param(&[1.0, 1.0], Some(&g));
        let mut opt = OptimizerState::new(OptimizerConfig::asgd(), &[&p]).unwrap();
        let mut iterates = Vec::new();
        for t in 1..=3 {
            opt.step(vec![&mut p]).unwrap();
            for i in 0..2 {
                assert!((p.data()[i] - (1.0 - t as f64 * 1e-4 * g[i])).abs() < 1e-15);
            }
            iterates.push(p.data().to_vec());
        }
        let avg = &opt.averaged().unwrap()[0];
        for i in 0..2 {
            let mean = iterates.iter().map(|it| it[i]).sum::<f64>() / 3.0;
            assert!((avg.data()[i] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn asgd_zero_grad_keeps_everything() {
        let mut p = param(&[0.3], Some(&[0.0]));
        let mut opt = OptimizerState::new(OptimizerConfig::asgd(), &[&p]).unwrap();
        opt.step(vec![&mut p]).unwrap();
        assert_eq!(p.data(), &[0.3]);
        assert_eq!(opt.averaged().unwrap()[0].data(), &[0.3]);
    }

    #[test]
    fn clipping() {
        let mut p = param(&[-1.0, 0.005, 2.0], None);
        clip_weights(vec![&mut p], 0.01);
        assert_eq!(p.data(), &[-0.01, 0.005, 0.01]);
    }

    #[test]
    fn invalid_configs() {
        assert!(OptimizerConfig::Adam { lr: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }.validate().is_err());
        assert!(OptimizerConfig::Adam { lr: 1e-4, beta1: 1.0, beta2: 0.999, eps: 1e-8 }.validate().is_err());
    }
}
