//! Wasserstein critic objective, generator adversarial term, and the
//! critic stabilisers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{bind_frozen, Critic};
use crate::tensor::{Element, Graph, Tensor, Var};

/// How the critic is kept (approximately) 1-Lipschitz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Stabilizer {
    /// `coefficient · E[(‖∇D(x̂)‖ − 1)²]` on real/fake interpolates.
    GradientPenalty { coefficient: f64 },
    /// Clamp every critic parameter to `[−bound, bound]` after each update.
    WeightClipping { bound: f64 },
    /// No stabilisation (for contrast runs).
    Off,
}

impl Default for Stabilizer {
    fn default() -> Self {
        Self::GradientPenalty { coefficient: 10.0 }
    }
}

impl Stabilizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::GradientPenalty { coefficient } if !(coefficient >= 0.0 && coefficient.is_finite()) => Err(
                Error::InvalidConfig(format!("penalty coefficient must be finite and ≥ 0, got {coefficient}")),
            ),
            Self::WeightClipping { bound } if !(bound > 0.0 && bound.is_finite()) => Err(Error::InvalidConfig(
                format!("clip bound must be finite and > 0, got {bound}"),
            )),
            _ => Ok(()),
        }
    }
}

fn check_scores<T: Element>(g: &Graph<T>, v: Var, op: &'static str) -> Result<()> {
    if g.shape(v).len() != 1 {
        return Err(Error::invalid(op, format!("expected a score vector, got {:?}", g.shape(v))));
    }
    Ok(())
}

/// `mean(fake) − mean(real) (+ penalty)`.
pub fn critic_loss<T: Element>(g: &mut Graph<T>, real: Var, fake: Var, penalty: Option<Var>) -> Result<Var> {
    check_scores(g, real, "critic_loss")?;
    check_scores(g, fake, "critic_loss")?;
    let mf = g.mean(fake)?;
    let mr = g.mean(real)?;
    let l = g.sub(mf, mr)?;
    match penalty {
        Some(p) => g.add(l, p),
        None => Ok(l),
    }
}

/// `−mean(fake)`.
pub fn adversarial_loss<T: Element>(g: &mut Graph<T>, fake: Var) -> Result<Var> {
    check_scores(g, fake, "adversarial_loss")?;
    let m = g.mean(fake)?;
    g.neg(m)
}

/// A gradient-penalty term recorded on a training graph.
#[derive(Clone, Debug)]
pub struct Penalty {
    /// One-element variable whose value is the penalty and whose gradient
    /// w.r.t. the critic parameters is the penalty's.
    pub var: Var,
    pub value: f64,
    /// `‖∇ₓ D(x̂_i)‖` per sample.
    pub grad_norms: Vec<f64>,
}

/// Gradient penalty on interpolates `x̂ = ε·real + (1 − ε)·fake`, with one
/// `ε ~ U(0, 1)` per sample.
///
/// `params` are the critic's parameters already bound on `g`. The input
/// gradient `∇ₓD(x̂)` is computed on a side graph; its parameter derivative
/// is then carried into `g` as a directional derivative of the critic along
/// that gradient, which has the same gradient w.r.t. the parameters as the
/// penalty itself (symmetry of mixed partials).
pub fn gradient_penalty<T, C, R>(
    g: &mut Graph<T>,
    critic: &C,
    params: &[Var],
    real: &Tensor<T>,
    fake: &Tensor<T>,
    coefficient: f64,
    rng: &mut R,
) -> Result<Penalty>
where
    T: Element,
    C: Critic<T> + ?Sized,
    R: Rng + ?Sized,
{
    if real.shape() != fake.shape() {
        return Err(Error::shape("gradient_penalty", real.shape(), fake.shape()));
    }
    if !(coefficient >= 0.0 && coefficient.is_finite()) {
        return Err(Error::invalid("gradient_penalty", format!("coefficient {coefficient}")));
    }
    let n = real.shape()[0];
    let per = real.numel() / n;
    let eps: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    if coefficient == 0.0 {
        let var = g.constant(Tensor::scalar(T::zero()));
        return Ok(Penalty {
            var,
            value: 0.0,
            grad_norms: Vec::new(),
        });
    }
    let mixed = Tensor::from_fn(real.shape(), |i| {
        let e = T::from_f64(eps[i / per]);
        e * real.data()[i] + (T::one() - e) * fake.data()[i]
    });

    let (input_grad, norms) = {
        let mut side = Graph::new();
        let frozen = bind_frozen(&mut side, critic);
        let x = side.leaf(mixed.clone().with_requires_grad(true));
        let s = critic.score(&mut side, &frozen, x)?;
        let total = side.sum(s)?;
        side.backward(total)?;
        let grad = side.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(mixed.shape()));
        let norms: Vec<f64> = grad
            .data()
            .chunks(per)
            .map(|c| c.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
            .collect();
        (grad, norms)
    };
    let value = coefficient * norms.iter().map(|&k| (k - 1.0) * (k - 1.0)).sum::<f64>() / n as f64;

    let weights: Vec<f64> = norms
        .iter()
        .map(|&k| if k > 0.0 { coefficient * 2.0 * (k - 1.0) / (n as f64 * k) } else { 0.0 })
        .collect();
    let x = g.constant(mixed);
    let dx = g.constant(input_grad);
    let (_, ds) = critic.score_tangent(g, params, x, dx)?;
    let w = g.constant(Tensor::from_fn(&[n], |i| T::from_f64(weights[i])));
    let weighted = g.mul(ds, w)?;
    let surrogate = g.sum(weighted)?;
    let frozen = g.detach(surrogate);
    let centred = g.sub(surrogate, frozen)?;
    let var = g.add_scalar(centred, T::from_f64(value))?;
    Ok(Penalty {
        var,
        value,
        grad_norms: norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(g: &mut Graph<f64>, v: &[f64]) -> Var {
        g.constant(Tensor::new(&[v.len()], v.to_vec()).unwrap())
    }

    #[test]
    fn critic_loss_example() {
        let mut g = Graph::new();
        let (r, f) = (scores(&mut g, &[1.0, 1.0]), scores(&mut g, &[0.0, 0.0]));
        let l = critic_loss(&mut g, r, f, None).unwrap();
        assert_eq!(g.value(l).item(), -1.0);
    }

    #[test]
    fn adversarial_loss_example() {
        let mut g = Graph::new();
        let f = scores(&mut g, &[2.0, 4.0]);
        let l = adversarial_loss(&mut g, f).unwrap();
        assert_eq!(g.value(l).item(), -3.0);
    }

    #[test]
    fn stabilizer_validation() {
        assert!(Stabilizer::GradientPenalty { coefficient: -1.0 }.validate().is_err());
        assert!(Stabilizer::WeightClipping { bound: 0.0 }.validate().is_err());
        assert!(Stabilizer::Off.validate().is_ok());
        assert_eq!(Stabilizer::default(), Stabilizer::GradientPenalty { coefficient: 10.0 });
    }
}
