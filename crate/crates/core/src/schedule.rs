//! Noise schedules and the closed-form forward marginal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("timestep count must be at least 1")]
    ZeroSteps,
    #[error("beta range must satisfy 0 < betaMin <= betaMax < 1 (got {min}, {max})")]
    BetaRange { min: f64, max: f64 },
    #[error("timestep {t} outside 1..={steps}")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("noise has dimension {noise}, x0 has {x0}")]
    DimensionMismatch { x0: usize, noise: usize },
    #[error("cumulative product underflows at step {t}")]
    Underflow { t: usize },
    #[error("stored betas do not match the schedule parameters")]
    Inconsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta_min: f64,
    beta_max: f64,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;

pub fn build_schedule(
    kind: ScheduleKind,
    steps: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<NoiseSchedule, ScheduleError> {
    if steps == 0 {
        return Err(ScheduleError::ZeroSteps);
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(ScheduleError::BetaRange { min: beta_min, max: beta_max });
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            if steps == 1 {
                vec![beta_min]
            } else {
                let span = beta_max - beta_min;
                (0..steps).map(|i| beta_min + span * i as f64 / (steps - 1) as f64).collect()
            }
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let a = ((t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET))
                    * std::f64::consts::FRAC_PI_2;
                a.cos().powi(2)
            };
            (1..=steps)
                .map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(beta_min, beta_max))
                .collect()
        }
    };
    NoiseSchedule::from_betas(kind, beta_min, beta_max, betas)
}

impl NoiseSchedule {
    fn from_betas(
        kind: ScheduleKind,
        beta_min: f64,
        beta_max: f64,
        betas: Vec<f64>,
    ) -> Result<Self, ScheduleError> {
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for (i, b) in betas.iter().enumerate() {
            let next = acc * (1.0 - b);
            if !(next > 0.0) || next >= acc {
                return Err(ScheduleError::Underflow { t: i + 1 });
            }
            acc = next;
            alpha_bars.push(acc);
        }
        Ok(Self { kind, beta_min, beta_max, betas, alpha_bars })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }
    pub fn steps(&self) -> usize {
        self.betas.len()
    }
    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }
    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// β_t for 1-based `t`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }
    /// α_t = 1 − β_t.
    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }
    /// ᾱ_t for 1-based `t`; ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn terminal_alpha_bar(&self) -> f64 {
        *self.alpha_bars.last().expect("schedule has at least one step")
    }

    /// Whether the terminal marginal is close enough to N(0, I) for the prior term.
    pub fn is_near_pure_noise(&self) -> bool {
        self.terminal_alpha_bar() < 0.05
    }

    pub fn check_t(&self, t: usize) -> Result<(), ScheduleError> {
        if t == 0 || t > self.steps() {
            Err(ScheduleError::TimestepOutOfRange { t, steps: self.steps() })
        } else {
            Ok(())
        }
    }

    /// Posterior q(x_{t-1} | x_t, x0) coefficients (c1 on x0, c2 on x_t) and variance β̃_t.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta = self.beta(t);
        let c1 = ab_prev.sqrt() * beta / (1.0 - ab);
        let c2 = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = (1.0 - ab_prev) * beta / (1.0 - ab);
        (c1, c2, var)
    }

    /// Same kind with `steps` timesteps, endpoints scaled by the step ratio so the
    /// total amount of noise stays comparable.
    pub fn rescaled(&self, steps: usize) -> Result<Self, ScheduleError> {
        let ratio = self.steps() as f64 / steps.max(1) as f64;
        let cap = 0.999;
        build_schedule(
            self.kind,
            steps,
            (self.beta_min * ratio).min(cap),
            (self.beta_max * ratio).min(cap),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct ScheduleRecord {
    kind: ScheduleKind,
    #[serde(rename = "T")]
    steps: usize,
    #[serde(rename = "betaMin")]
    beta_min: f64,
    #[serde(rename = "betaMax")]
    beta_max: f64,
    betas: Vec<f64>,
}

impl Serialize for NoiseSchedule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ScheduleRecord {
            kind: self.kind,
            steps: self.steps(),
            beta_min: self.beta_min,
            beta_max: self.beta_max,
            betas: self.betas.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NoiseSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ScheduleRecord::deserialize(d)?;
        if r.betas.len() != r.steps || r.steps == 0 {
            return Err(D::Error::custom(ScheduleError::Inconsistent));
        }
        if r.betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(D::Error::custom(ScheduleError::BetaRange { min: r.beta_min, max: r.beta_max }));
        }
        NoiseSchedule::from_betas(r.kind, r.beta_min, r.beta_max, r.betas).map_err(D::Error::custom)
    }
}

/// x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε.
pub fn q_sample(
    x0: &[f64],
    t: usize,
    noise: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>, ScheduleError> {
    sched.check_t(t)?;
    q_sample_with_alpha_bar(x0, sched.alpha_bar(t), noise)
}

pub fn q_sample_with_alpha_bar(
    x0: &[f64],
    alpha_bar: f64,
    noise: &[f64],
) -> Result<Vec<f64>, ScheduleError> {
    if x0.len() != noise.len() {
        return Err(ScheduleError::DimensionMismatch { x0: x0.len(), noise: noise.len() });
    }
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).max(0.0).sqrt();
    Ok(x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}
