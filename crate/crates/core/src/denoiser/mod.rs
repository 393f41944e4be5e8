//! Conditional denoisers: the reverse-transition interface and its implementations.

pub mod analytic;
pub mod checkpoint;
pub mod mlp;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{Condition, ConditionError};
use crate::gaussian::Variance;
use crate::schedule::NoiseSchedule;
use crate::trajectory::NoiseBank;

pub use analytic::{analytic_posterior_x0, AnalyticDenoiser, GaussianClassModel};
pub use mlp::{Mlp, MlpArch, MlpDenoiser};
pub use train::{train_mlp, ConditionedSample, Optimizer, TrainConfig, TrainError, TrainLog};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown condition {0}")]
    UnknownCondition(String),
    #[error("input has dimension {got}, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("timestep {t} outside 1..={steps}")]
    Timestep { t: usize, steps: usize },
    #[error("class variance must be finite and non-negative, got {0}")]
    ClassVariance(f64),
    #[error(transparent)]
    Condition(#[from] ConditionError),
}

/// Parameters of p(x_{t−1} | x_t, c).
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub mean: Vec<f64>,
    pub variance: Variance,
}

/// Reverse-process variance used by ε-predicting models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SigmaMode {
    /// σ_t² = β_t.
    #[default]
    Beta,
    /// σ_t² = β̃_t, with β_1 used at t = 1 where β̃ vanishes.
    BetaTilde,
}

impl SigmaMode {
    pub fn variance(self, t: usize, sched: &NoiseSchedule) -> f64 {
        match self {
            SigmaMode::Beta => sched.beta(t),
            SigmaMode::BetaTilde => {
                if t == 1 {
                    sched.beta(1)
                } else {
                    sched.posterior_coefficients(t).2
                }
            }
        }
    }
}

pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;

    /// ε̂(x_t, t, c).
    fn predict_eps(&self, x_t: &[f64], t: usize, c: &Condition, sched: &NoiseSchedule)
        -> Result<Vec<f64>, ModelError>;

    /// Mean and variance of the reverse transition.
    fn denoise(&self, x_t: &[f64], t: usize, c: &Condition, sched: &NoiseSchedule)
        -> Result<DenoiserOutput, ModelError>;

    /// Optional batched scorer for forward-anchored chains drawn from `bank`.
    /// It must agree with the per-step path up to rounding.
    fn path_scorer<'a>(&'a self, _bank: &'a NoiseBank, _sched: &'a NoiseSchedule)
        -> Option<Box<dyn PathScorer + 'a>> {
        None
    }
}

/// Batched transition log-densities along the cached forward chains.
pub trait PathScorer: Send + Sync {
    /// Returns `out[candidate][trial] = Σ_t log p(x_{t−1} | x_t, c)`.
    fn transition_logs(&self, x0: &[f64], candidates: &[Condition]) -> Result<Vec<Vec<f64>>, ModelError>;
}

/// DDPM mean from an ε-prediction: (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t.
pub fn mean_from_eps(x_t: &[f64], eps: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / sched.alpha(t).sqrt();
    x_t.iter().zip(eps).map(|(x, e)| (x - coef * e) * inv).collect()
}

pub(crate) fn check_input(expected: usize, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<(), ModelError> {
    if x.len() != expected {
        return Err(ModelError::Dimension { expected, got: x.len() });
    }
    if t == 0 || t > sched.steps() {
        return Err(ModelError::Timestep { t, steps: sched.steps() });
    }
    Ok(())
}

/// Wraps a denoiser so every condition is replaced by one fixed condition.
pub struct ConditionBlind<D> {
    inner: D,
    fixed: Condition,
}

impl<D: Denoiser> ConditionBlind<D> {
    pub fn new(inner: D, fixed: Condition) -> Self {
        Self { inner, fixed }
    }
}

impl<D: Denoiser> Denoiser for ConditionBlind<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn predict_eps(&self, x_t: &[f64], t: usize, _c: &Condition, sched: &NoiseSchedule)
        -> Result<Vec<f64>, ModelError> {
        self.inner.predict_eps(x_t, t, &self.fixed, sched)
    }
    fn denoise(&self, x_t: &[f64], t: usize, _c: &Condition, sched: &NoiseSchedule)
        -> Result<DenoiserOutput, ModelError> {
        self.inner.denoise(x_t, t, &self.fixed, sched)
    }
    fn path_scorer<'a>(&'a self, bank: &'a NoiseBank, sched: &'a NoiseSchedule)
        -> Option<Box<dyn PathScorer + 'a>> {
        let inner = self.inner.path_scorer(bank, sched)?;
        Some(Box::new(BlindScorer { inner, fixed: &self.fixed }))
    }
}

struct BlindScorer<'a> {
    inner: Box<dyn PathScorer + 'a>,
    fixed: &'a Condition,
}

impl PathScorer for BlindScorer<'_> {
    fn transition_logs(&self, x0: &[f64], candidates: &[Condition]) -> Result<Vec<Vec<f64>>, ModelError> {
        let one = self.inner.transition_logs(x0, std::slice::from_ref(self.fixed))?;
        Ok(vec![one[0].clone(); candidates.len()])
    }
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn predict_eps(&self, x_t: &[f64], t: usize, c: &Condition, sched: &NoiseSchedule)
        -> Result<Vec<f64>, ModelError> {
        (**self).predict_eps(x_t, t, c, sched)
    }
    fn denoise(&self, x_t: &[f64], t: usize, c: &Condition, sched: &NoiseSchedule)
        -> Result<DenoiserOutput, ModelError> {
        (**self).denoise(x_t, t, c, sched)
    }
    fn path_scorer<'a>(&'a self, bank: &'a NoiseBank, sched: &'a NoiseSchedule)
        -> Option<Box<dyn PathScorer + 'a>> {
        (**self).path_scorer(bank, sched)
    }
}

impl<T: Denoiser + ?Sized> Denoiser for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn predict_eps(&self, x_t: &[f64], t: usize, c: &Condition, sched: &NoiseSchedule)
        -> Result<Vec<f64>, ModelError> {
        (**self).predict_eps(x_t, t, c, sched)
    }
    fn denoise(&self, x_t: &[f64], t: usize, c: &Condition, sched: &NoiseSchedule)
        -> Result<DenoiserOutput, ModelError> {
        (**self).denoise(x_t, t, c, sched)
    }
    fn path_scorer<'a>(&'a self, bank: &'a NoiseBank, sched: &'a NoiseSchedule)
        -> Option<Box<dyn PathScorer + 'a>> {
        (**self).path_scorer(bank, sched)
    }
}
