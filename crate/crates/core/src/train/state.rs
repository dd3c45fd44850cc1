//! Training configuration, state, and the adversarial step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{StepMetrics, StepRecord};
use super::optim::{clip_weights, OptimizerConfig, OptimizerState, StepOutcome};
use crate::data::{BatchCursor, ImagePair};
use crate::error::{Error, Result};
use crate::loss::{critic_loss, generator_loss, gradient_penalty, psnr, ssim, LossBreakdown, LossConfig, Stabilizer};
use crate::nn::{bind, bind_frozen, collect_grads, ConvCritic, Critic, CriticSpec, Generator, GeneratorSpec, Module};
use crate::tensor::{Element, Graph, Tensor};

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub generator: GeneratorSpec,
    pub critic: CriticSpec,
    pub loss: LossConfig,
    pub generator_optimizer: OptimizerConfig,
    pub critic_optimizer: OptimizerConfig,
    /// Critic updates per generator update.
    pub n_critic: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorSpec::default(),
            critic: CriticSpec::default(),
            loss: LossConfig::default(),
            generator_optimizer: OptimizerConfig::adam(),
            critic_optimizer: OptimizerConfig::asgd(),
            n_critic: 5,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.critic.validate()?;
        self.loss.validate()?;
        self.generator_optimizer.validate()?;
        self.critic_optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if self.generator.image_channels != self.critic.image_channels {
            return Err(Error::InvalidConfig("generator and critic disagree on image channels".into()));
        }
        Ok(())
    }
}

/// A non-fatal incident during training (skipped update).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainEvent {
    pub iter: u64,
    pub phase: String,
    pub message: String,
}

/// Networks, optimisers, RNG, data position, and history of a run.
#[derive(Clone, Debug)]
pub struct TrainState<T: Element> {
    pub config: TrainConfig,
    pub generator: Generator<T>,
    pub critic: ConvCritic<T>,
    pub generator_opt: OptimizerState<T>,
    pub critic_opt: OptimizerState<T>,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub cursor: BatchCursor,
    pub history: Vec<StepRecord>,
    pub events: Vec<TrainEvent>,
}

fn finite_loss(v: f64) -> bool {
    v.is_finite()
}

impl<T: Element> TrainState<T> {
    /// Fresh networks initialised from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Generator::new(&config.generator, &mut rng)?;
        let critic = ConvCritic::new(&config.critic, &mut rng)?;
        let generator_opt = OptimizerState::new(config.generator_optimizer, &generator.parameters())?;
        let critic_opt = OptimizerState::new(config.critic_optimizer, &critic.parameters())?;
        Ok(Self {
            config,
            generator,
            critic,
            generator_opt,
            critic_opt,
            iteration: 0,
            rng,
            cursor: BatchCursor::default(),
            history: Vec::new(),
            events: Vec::new(),
        })
    }

    fn event(&mut self, phase: &str, message: impl Into<String>) {
        let e = TrainEvent {
            iter: self.iteration,
            phase: phase.into(),
            message: message.into(),
        };
        log::warn!("iteration {}: {} update skipped: {}", e.iter, e.phase, e.message);
        self.events.push(e);
    }

    /// One critic update; returns its loss if it was applied.
    fn critic_update(&mut self, hr: &Tensor<T>, fake: &Tensor<T>) -> Result<Option<f64>> {
        let mut g = Graph::new();
        let params = bind(&mut g, &self.critic);
        let real_v = g.constant(hr.clone());
        let fake_v = g.constant(fake.clone());
        let rs = self.critic.score(&mut g, &params, real_v)?;
        let fs = self.critic.score(&mut g, &params, fake_v)?;
        let penalty = match self.config.loss.wgan_stabilizer {
            Stabilizer::GradientPenalty { coefficient } => {
                Some(gradient_penalty(&mut g, &self.critic, &params, hr, fake, coefficient, &mut self.rng)?.var)
            }
            _ => None,
        };
        let loss = critic_loss(&mut g, rs, fs, penalty)?;
        let value = g.value(loss).item().as_f64();
        if !finite_loss(value) {
            self.event("critic", format!("non-finite loss {value}"));
            return Ok(None);
        }
        g.backward(loss)?;
        self.critic.zero_grad();
        collect_grads(&g, &params, &mut self.critic)?;
        let outcome = self.critic_opt.step(self.critic.parameters_mut())?;
        self.critic.zero_grad();
        if let StepOutcome::Skipped(reason) = outcome {
            self.event("critic", reason);
            return Ok(None);
        }
        if let Stabilizer::WeightClipping { bound } = self.config.loss.wgan_stabilizer {
            clip_weights(self.critic.parameters_mut(), bound);
        }
        Ok(Some(value))
    }

    /// The generator update; returns the objective and its terms.
    fn generator_update(&mut self, lr: &Tensor<T>, hr: &Tensor<T>) -> Result<(f64, LossBreakdown, bool)> {
        let mut g = Graph::new();
        let gp = bind(&mut g, &self.generator);
        let cp = bind_frozen(&mut g, &self.critic);
        let x = g.constant(lr.clone());
        let h = g.constant(hr.clone());
        let sr = self.generator.forward(&mut g, &gp, x)?;
        // With λ = 0 the critic only feeds the log; keep it off the tape.
        let critic_in = if self.config.loss.lambda == 0.0 { g.detach(sr) } else { sr };
        let fs = self.critic.score(&mut g, &cp, critic_in)?;
        let terms = generator_loss(&mut g, sr, h, fs, &self.config.loss)?;
        let value = g.value(terms.total).item().as_f64();
        let breakdown = terms.breakdown(&g);
        if !finite_loss(value) {
            self.event("generator", format!("non-finite loss {value}"));
            return Ok((value, breakdown, false));
        }
        g.backward(terms.total)?;
        self.generator.zero_grad();
        collect_grads(&g, &gp, &mut self.generator)?;
        let outcome = self.generator_opt.step(self.generator.parameters_mut())?;
        self.generator.zero_grad();
        if let StepOutcome::Skipped(reason) = outcome {
            self.event("generator", reason);
            return Ok((value, breakdown, false));
        }
        Ok((value, breakdown, true))
    }

    /// `n_critic` critic updates on `(hr, G(lr))`, then one generator update
    /// on the full generator objective; PSNR/SSIM are measured on the updated generator's output.
    pub fn train_step(&mut self, lr: &Tensor<T>, hr: &Tensor<T>) -> Result<StepRecord> {
        if lr.ndim() != 4 || hr.ndim() != 4 || lr.shape()[0] != hr.shape()[0] {
            return Err(Error::shape("train_step", lr.shape(), hr.shape()));
        }
        self.iteration += 1;
        let mut critic_losses = Vec::with_capacity(self.config.n_critic);
        if self.config.n_critic > 0 {
            let fake = self.generator.infer(lr)?;
            for _ in 0..self.config.n_critic {
                if let Some(l) = self.critic_update(hr, &fake)? {
                    critic_losses.push(l);
                }
            }
        }
        let (gen_loss, breakdown, generator_updated) = self.generator_update(lr, hr)?;
        let sr = self.generator.infer(lr)?.map(|v| v.max(T::zero()).min(T::one()));
        let critic_loss = if critic_losses.is_empty() {
            0.0
        } else {
            critic_losses.iter().sum::<f64>() / critic_losses.len() as f64
        };
        let record = StepRecord {
            metrics: StepMetrics {
                iter: self.iteration,
                critic_loss,
                gen_loss,
                psnr: psnr(&sr, hr, 1.0)?,
                ssim: ssim(&sr, hr)?,
            },
            breakdown,
            critic_updates: critic_losses.len() as u32,
            generator_updated,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Runs `iterations` steps over `pairs`, calling `on_step` after each.
    pub fn fit_with<F>(&mut self, pairs: &[ImagePair], iterations: u64, mut on_step: F) -> Result<Vec<StepRecord>>
    where
        F: FnMut(&Self, &StepRecord) -> Result<()>,
    {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset("no training pairs".into()));
        }
        let mut out = Vec::with_capacity(iterations as usize);
        for _ in 0..iterations {
            let batch = self
                .cursor
                .next_batch::<T>(pairs, self.config.batch_size, self.config.seed)?;
            let rec = self.train_step(&batch.lr, &batch.hr)?;
            on_step(self, &rec)?;
            out.push(rec);
        }
        Ok(out)
    }

    pub fn fit(&mut self, pairs: &[ImagePair], iterations: u64) -> Result<Vec<StepRecord>> {
        self.fit_with(pairs, iterations, |_, _| Ok(()))
    }
}
