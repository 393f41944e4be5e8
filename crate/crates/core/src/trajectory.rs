//! Forward noising trajectories.
//!
//! Every latent is written as x_t = √ᾱ_t·x0 + z_t where the noise part z_t
//! does not depend on x0. [`NoiseBank`] caches z for all trials so that many
//! examples can share the same draws.

use serde::{Deserialize, Serialize};

use crate::gaussian::LN_2PI;
use crate::rng::{fill_normal, lane, StreamKey};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Coupling {
    /// x_t = √(1−β_t)·x_{t−1} + √β_t·ε_t with one draw per step.
    #[default]
    Markov,
    /// One draw per trial reused for every t through the closed-form marginal.
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// x_1 … x_T.
    pub latents: Vec<Vec<f64>>,
    /// Raw draws: T of them for Markov coupling, one for shared.
    pub noises: Vec<Vec<f64>>,
    pub seed: u64,
    pub trial: u64,
    pub coupling: Coupling,
}

impl Trajectory {
    /// ε̄_t such that latents[t] = q_sample(x0, t, ε̄_t).
    pub fn marginal_noise(&self, x0: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
        let ab = sched.alpha_bar(t);
        let s = (1.0 - ab).sqrt();
        self.latents[t - 1]
            .iter()
            .zip(x0)
            .map(|(x, x0)| (x - ab.sqrt() * x0) / s)
            .collect()
    }
}

/// Forward trajectory for trial 0 with the default coupling.
pub fn forward_trajectory(x0: &[f64], sched: &NoiseSchedule, seed: u64) -> Trajectory {
    forward_trajectory_with(x0, sched, seed, 0, Coupling::default())
}

pub fn forward_trajectory_with(
    x0: &[f64],
    sched: &NoiseSchedule,
    seed: u64,
    trial: u64,
    coupling: Coupling,
) -> Trajectory {
    let dim = x0.len();
    let steps = sched.steps();
    let z = noise_path(seed, trial, dim, sched, coupling);
    let latents = (1..=steps)
        .map(|t| {
            let a = sched.alpha_bar(t).sqrt();
            x0.iter().zip(&z.z[t * dim..(t + 1) * dim]).map(|(x, z)| a * x + z).collect()
        })
        .collect();
    Trajectory { latents, noises: z.draws, seed, trial, coupling }
}

struct NoisePath {
    /// (T+1)·D values, z_0 = 0.
    z: Vec<f64>,
    draws: Vec<Vec<f64>>,
}

fn noise_path(seed: u64, trial: u64, dim: usize, sched: &NoiseSchedule, coupling: Coupling) -> NoisePath {
    let steps = sched.steps();
    let mut z = vec![0.0; (steps + 1) * dim];
    let mut draws = Vec::new();
    match coupling {
        Coupling::Markov => {
            let mut eps = vec![0.0; dim];
            for t in 1..=steps {
                fill_normal(StreamKey::new(seed, trial, t as u64, lane::FORWARD), &mut eps);
                let (a, b) = (sched.alpha(t).sqrt(), sched.beta(t).sqrt());
                let (prev, cur) = z.split_at_mut(t * dim);
                let prev = &prev[(t - 1) * dim..];
                for i in 0..dim {
                    cur[i] = a * prev[i] + b * eps[i];
                }
                draws.push(eps.clone());
            }
        }
        Coupling::Shared => {
            let mut eps = vec![0.0; dim];
            fill_normal(StreamKey::new(seed, trial, 0, lane::FORWARD), &mut eps);
            for t in 1..=steps {
                let s = (1.0 - sched.alpha_bar(t)).sqrt();
                for i in 0..dim {
                    z[t * dim + i] = s * eps[i];
                }
            }
            draws.push(eps);
        }
    }
    NoisePath { z, draws }
}

/// Cached noise parts for `trials` trajectories of dimension `dim`.
#[derive(Debug, Clone)]
pub struct NoiseBank {
    seed: u64,
    trials: usize,
    steps: usize,
    dim: usize,
    coupling: Coupling,
    /// trials × (T+1) × D
    z: Vec<f64>,
    /// trials × (T+1): |z_t|²
    sq: Vec<f64>,
    /// trials × (T+1): z_{t−1}·z_t (entry 0 unused)
    cross: Vec<f64>,
    /// log q(x_{1:T} | x0) per trial; independent of x0.
    proposal: Vec<f64>,
}

impl NoiseBank {
    pub fn new(seed: u64, trials: usize, dim: usize, sched: &NoiseSchedule, coupling: Coupling) -> Self {
        let steps = sched.steps();
        let stride = (steps + 1) * dim;
        let mut z = Vec::with_capacity(trials * stride);
        let mut sq = Vec::with_capacity(trials * (steps + 1));
        let mut cross = Vec::with_capacity(trials * (steps + 1));
        let mut proposal = Vec::with_capacity(trials);
        for n in 0..trials {
            let path = noise_path(seed, n as u64, dim, sched, coupling);
            let mut q = 0.0;
            for t in 0..=steps {
                let cur = &path.z[t * dim..(t + 1) * dim];
                sq.push(dot(cur, cur));
                if t == 0 {
                    cross.push(0.0);
                    continue;
                }
                let prev = &path.z[(t - 1) * dim..t * dim];
                cross.push(dot(prev, cur));
                let a = sched.alpha(t).sqrt();
                let r: f64 = cur.iter().zip(prev).map(|(c, p)| (c - a * p).powi(2)).sum();
                let b = sched.beta(t);
                q += -0.5 * (dim as f64 * (LN_2PI + b.ln()) + r / b);
            }
            proposal.push(q);
            z.extend_from_slice(&path.z);
        }
        Self { seed, trials, steps, dim, coupling, z, sq, cross, proposal }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn trials(&self) -> usize {
        self.trials
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    /// z_t for trial `n`, 0 ≤ t ≤ T.
    pub fn z(&self, n: usize, t: usize) -> &[f64] {
        let off = (n * (self.steps + 1) + t) * self.dim;
        &self.z[off..off + self.dim]
    }

    /// All z_0..z_T of trial `n`, row-major.
    pub fn trial_block(&self, n: usize) -> &[f64] {
        let stride = (self.steps + 1) * self.dim;
        &self.z[n * stride..(n + 1) * stride]
    }

    /// Entire bank as a (trials·(T+1)) × D row-major matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.z
    }

    pub fn sq_norm(&self, n: usize, t: usize) -> f64 {
        self.sq[n * (self.steps + 1) + t]
    }

    /// z_{t−1}·z_t, t ≥ 1.
    pub fn cross(&self, n: usize, t: usize) -> f64 {
        self.cross[n * (self.steps + 1) + t]
    }

    pub fn proposal_log(&self, n: usize) -> f64 {
        self.proposal[n]
    }

    /// Materializes x_t = √ᾱ_t·x0 + z_t.
    pub fn latent(&self, x0: &[f64], n: usize, t: usize, sched: &NoiseSchedule) -> Vec<f64> {
        let a = sched.alpha_bar(t).sqrt();
        x0.iter().zip(self.z(n, t)).map(|(x, z)| a * x + z).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, q_sample, ScheduleKind};

    fn sched() -> NoiseSchedule {
        build_schedule(ScheduleKind::Linear, 12, 0.01, 0.3).unwrap()
    }

    #[test]
    fn deterministic() {
        let x0 = vec![0.5, -1.0, 2.0];
        let s = sched();
        assert_eq!(forward_trajectory(&x0, &s, 4), forward_trajectory(&x0, &s, 4));
        assert_ne!(forward_trajectory(&x0, &s, 4), forward_trajectory(&x0, &s, 5));
    }

    #[test]
    fn latents_are_marginal_draws() {
        let x0 = vec![0.5, -1.0, 2.0];
        let s = sched();
        for coupling in [Coupling::Markov, Coupling::Shared] {
            let tr = forward_trajectory_with(&x0, &s, 3, 2, coupling);
            assert_eq!(tr.latents.len(), s.steps());
            for t in 1..=s.steps() {
                let e = tr.marginal_noise(&x0, t, &s);
                let back = q_sample(&x0, t, &e, &s).unwrap();
                for (a, b) in back.iter().zip(&tr.latents[t - 1]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn markov_recurrence() {
        let x0 = vec![1.0, 2.0];
        let s = sched();
        let tr = forward_trajectory_with(&x0, &s, 1, 0, Coupling::Markov);
        let mut prev = x0.clone();
        for t in 1..=s.steps() {
            let e = &tr.noises[t - 1];
            for i in 0..2 {
                let expect = s.alpha(t).sqrt() * prev[i] + s.beta(t).sqrt() * e[i];
                assert!((expect - tr.latents[t - 1][i]).abs() < 1e-12);
            }
            prev = tr.latents[t - 1].clone();
        }
    }

    #[test]
    fn shared_uses_one_draw() {
        let x0 = vec![1.0, 2.0];
        let s = sched();
        let tr = forward_trajectory_with(&x0, &s, 1, 0, Coupling::Shared);
        assert_eq!(tr.noises.len(), 1);
        for t in 1..=s.steps() {
            let q = q_sample(&x0, t, &tr.noises[0], &s).unwrap();
            assert_eq!(q, tr.latents[t - 1]);
        }
    }

    #[test]
    fn bank_matches_trajectory() {
        let x0 = vec![0.1, 0.2, -0.3, 0.4];
        let s = sched();
        let bank = NoiseBank::new(8, 3, 4, &s, Coupling::Markov);
        for n in 0..3 {
            let tr = forward_trajectory_with(&x0, &s, 8, n as u64, Coupling::Markov);
            for t in 1..=s.steps() {
                assert_eq!(bank.latent(&x0, n, t, &s), tr.latents[t - 1]);
            }
            assert!((bank.sq_norm(n, 3) - dot(bank.z(n, 3), bank.z(n, 3))).abs() < 1e-12);
            assert!((bank.cross(n, 3) - dot(bank.z(n, 2), bank.z(n, 3))).abs() < 1e-12);
        }
    }

    #[test]
    fn markov_proposal_is_step_density() {
        let s = sched();
        let bank = NoiseBank::new(2, 1, 3, &s, Coupling::Markov);
        let tr = forward_trajectory_with(&[0.0; 3], &s, 2, 0, Coupling::Markov);
        let expect: f64 = tr
            .noises
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let b = s.beta(i + 1);
                -0.5 * (3.0 * (LN_2PI + b.ln()) + dot(e, e))
            })
            .sum();
        assert!((bank.proposal_log(0) - expect).abs() < 1e-9);
    }
}
