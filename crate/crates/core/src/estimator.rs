//! Monte-Carlo estimation of log p(x0 | c), Bayes-rule classification and the
//! denoising-error baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::Condition;
use crate::denoiser::{Denoiser, ModelError, PathScorer};
use crate::gaussian::{gaussian_log_pdf, log_mean_exp, standard_normal_log_pdf, DiagGaussian, GaussianError};
use crate::rng::{fill_normal, lane, StreamKey};
use crate::schedule::{q_sample, NoiseSchedule};
use crate::trajectory::{Coupling, NoiseBank};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("invalid estimator config: {0}")]
    Config(String),
    #[error("x0 has dimension {got}, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("x0 contains non-finite values")]
    NonFiniteInput,
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("non-finite log-density in trial {trial}, timestep {timestep} for candidate {candidate}")]
    NonFinite { trial: usize, timestep: usize, candidate: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LatentMode {
    /// Transitions conditioned on the forward latents x_t.
    #[default]
    ForwardAnchored,
    /// Transitions conditioned on latents x̄_t obtained by running the reverse
    /// chain from x_T.
    ReverseAnchored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Aggregation {
    /// Σ_n of per-trial logs.
    #[default]
    JensenSum,
    /// log of the mean of per-trial likelihoods.
    LogSumExp,
}

impl Aggregation {
    pub fn apply(self, logs: &[f64]) -> f64 {
        match self {
            Aggregation::JensenSum => logs.iter().sum(),
            Aggregation::LogSumExp => log_mean_exp(logs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EstimatorConfig {
    #[serde(rename = "N")]
    pub trials: usize,
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub seed: u64,
    #[serde(default)]
    pub latent_mode: LatentMode,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub coupling: Coupling,
    /// Subtract log q(x_{1:T} | x0) from every trial, turning trial logs into
    /// importance weights.
    #[serde(default)]
    pub proposal_correction: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            timesteps: 100,
            seed: 0,
            latent_mode: LatentMode::default(),
            aggregation: Aggregation::default(),
            coupling: Coupling::default(),
            proposal_correction: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<(), EstimateError> {
        if self.trials == 0 {
            return Err(EstimateError::Config("N must be at least 1".into()));
        }
        if self.timesteps == 0 {
            return Err(EstimateError::Config("T must be at least 1".into()));
        }
        if self.timesteps != sched.steps() {
            return Err(EstimateError::Config(format!(
                "T is {} but the schedule has {} steps",
                self.timesteps,
                sched.steps()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LikelihoodEstimate {
    pub log_likelihood: f64,
    pub per_trial_logs: Vec<f64>,
    /// Mean over trials of log p(x_T).
    pub prior_term_log: f64,
    pub per_trial_prior_logs: Vec<f64>,
    /// log q(x_{1:T} | x0) per trial; subtracted only with `proposalCorrection`.
    pub per_trial_proposal_logs: Vec<f64>,
    pub seed: u64,
    pub config: EstimatorConfig,
}

impl LikelihoodEstimate {
    /// log-mean-exp of the trial logs minus their mean; non-negative.
    pub fn jensen_gap(&self) -> f64 {
        let mean = self.per_trial_logs.iter().sum::<f64>() / self.per_trial_logs.len() as f64;
        log_mean_exp(&self.per_trial_logs) - mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Posterior {
    pub candidate_ids: Vec<String>,
    pub log_likelihoods: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub argmax: usize,
}

impl Posterior {
    pub fn from_log_likelihoods(candidate_ids: Vec<String>, log_likelihoods: Vec<f64>) -> Self {
        let mut argmax = 0;
        for (i, v) in log_likelihoods.iter().enumerate() {
            if *v > log_likelihoods[argmax] {
                argmax = i;
            }
        }
        let top = log_likelihoods[argmax];
        let w: Vec<f64> = log_likelihoods.iter().map(|v| (v - top).exp()).collect();
        let z: f64 = w.iter().sum();
        let probabilities = w.iter().map(|v| v / z).collect();
        Self { candidate_ids, log_likelihoods, probabilities, argmax }
    }
}

/// Shares one set of forward chains across every call.
pub struct Estimator<'a> {
    model: &'a dyn Denoiser,
    sched: &'a NoiseSchedule,
    cfg: EstimatorConfig,
    bank: &'a NoiseBank,
    scorer: Option<Box<dyn PathScorer + 'a>>,
}

impl<'a> Estimator<'a> {
    pub fn bank_for(cfg: &EstimatorConfig, dim: usize, sched: &NoiseSchedule) -> NoiseBank {
        NoiseBank::new(cfg.seed, cfg.trials, dim, sched, cfg.coupling)
    }

    pub fn new(
        model: &'a dyn Denoiser,
        sched: &'a NoiseSchedule,
        cfg: &EstimatorConfig,
        bank: &'a NoiseBank,
    ) -> Result<Self, EstimateError> {
        cfg.validate(sched)?;
        if bank.trials() != cfg.trials
            || bank.seed() != cfg.seed
            || bank.coupling() != cfg.coupling
            || bank.steps() != sched.steps()
            || bank.dim() != model.dim()
        {
            return Err(EstimateError::Config("noise bank was built for a different configuration".into()));
        }
        let scorer = match cfg.latent_mode {
            LatentMode::ForwardAnchored => model.path_scorer(bank, sched),
            LatentMode::ReverseAnchored => None,
        };
        Ok(Self { model, sched, cfg: cfg.clone(), bank, scorer })
    }

    /// Disables the batched path so every density is evaluated step by step.
    pub fn stepwise(mut self) -> Self {
        self.scorer = None;
        self
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn estimate(&self, x0: &[f64], c: &Condition) -> Result<LikelihoodEstimate, EstimateError> {
        Ok(self.estimate_many(x0, std::slice::from_ref(c))?.remove(0))
    }

    /// One estimate per candidate, all from the same noise draws.
    pub fn estimate_many(&self, x0: &[f64], cands: &[Condition]) -> Result<Vec<LikelihoodEstimate>, EstimateError> {
        if cands.is_empty() {
            return Err(EstimateError::NoCandidates);
        }
        let dim = self.model.dim();
        if x0.len() != dim {
            return Err(EstimateError::Dimension { expected: dim, got: x0.len() });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(EstimateError::NonFiniteInput);
        }
        let steps = self.sched.steps();
        let priors: Vec<f64> = (0..self.cfg.trials)
            .map(|n| standard_normal_log_pdf(&self.bank.latent(x0, n, steps, self.sched)))
            .collect();
        let proposals: Vec<f64> = (0..self.cfg.trials).map(|n| self.bank.proposal_log(n)).collect();

        let transitions = match (&self.scorer, self.cfg.latent_mode) {
            (Some(s), _) => {
                let fast = s.transition_logs(x0, cands)?;
                if fast.iter().flatten().all(|v| v.is_finite()) {
                    fast
                } else {
                    self.forward_stepwise(x0, cands)?
                }
            }
            (None, LatentMode::ForwardAnchored) => self.forward_stepwise(x0, cands)?,
            (None, LatentMode::ReverseAnchored) => self.reverse_stepwise(x0, cands)?,
        };

        let prior_mean = priors.iter().sum::<f64>() / priors.len() as f64;
        Ok(transitions
            .into_iter()
            .map(|trans| {
                let per_trial_logs: Vec<f64> = trans
                    .iter()
                    .zip(&priors)
                    .zip(&proposals)
                    .map(|((tr, p), q)| if self.cfg.proposal_correction { p + tr - q } else { p + tr })
                    .collect();
                LikelihoodEstimate {
                    log_likelihood: self.cfg.aggregation.apply(&per_trial_logs),
                    per_trial_logs,
                    prior_term_log: prior_mean,
                    per_trial_prior_logs: priors.clone(),
                    per_trial_proposal_logs: proposals.clone(),
                    seed: self.cfg.seed,
                    config: self.cfg.clone(),
                }
            })
            .collect())
    }

    pub fn classify(&self, x0: &[f64], cands: &[Condition]) -> Result<Posterior, EstimateError> {
        let est = self.estimate_many(x0, cands)?;
        Ok(Posterior::from_log_likelihoods(
            cands.iter().map(Condition::id).collect(),
            est.iter().map(|e| e.log_likelihood).collect(),
        ))
    }

    fn transition_term(&self, prev: &[f64], x_t: &[f64], t: usize, c: &Condition, n: usize)
        -> Result<(f64, DiagGaussian), EstimateError> {
        let out = self.model.denoise(x_t, t, c, self.sched)?;
        let g = DiagGaussian::new(out.mean, out.variance)?;
        let lp = gaussian_log_pdf(prev, &g)?;
        if !lp.is_finite() {
            return Err(EstimateError::NonFinite { trial: n, timestep: t, candidate: c.id() });
        }
        Ok((lp, g))
    }

    fn forward_stepwise(&self, x0: &[f64], cands: &[Condition]) -> Result<Vec<Vec<f64>>, EstimateError> {
        let steps = self.sched.steps();
        let mut out = vec![vec![0.0; self.cfg.trials]; cands.len()];
        for n in 0..self.cfg.trials {
            let mut prev = x0.to_vec();
            for t in 1..=steps {
                let x_t = self.bank.latent(x0, n, t, self.sched);
                for (ci, c) in cands.iter().enumerate() {
                    out[ci][n] += self.transition_term(&prev, &x_t, t, c, n)?.0;
                }
                prev = x_t;
            }
        }
        Ok(out)
    }

    fn reverse_stepwise(&self, x0: &[f64], cands: &[Condition]) -> Result<Vec<Vec<f64>>, EstimateError> {
        let steps = self.sched.steps();
        let dim = x0.len();
        let mut out = vec![vec![0.0; self.cfg.trials]; cands.len()];
        let mut z = vec![0.0; dim];
        for n in 0..self.cfg.trials {
            let forward: Vec<Vec<f64>> = (0..=steps)
                .map(|t| if t == 0 { x0.to_vec() } else { self.bank.latent(x0, n, t, self.sched) })
                .collect();
            let mut bars: Vec<Vec<f64>> = vec![forward[steps].clone(); cands.len()];
            for t in (1..=steps).rev() {
                fill_normal(StreamKey::new(self.cfg.seed, n as u64, t as u64, lane::REVERSE), &mut z);
                for (ci, c) in cands.iter().enumerate() {
                    let (lp, g) = self.transition_term(&forward[t - 1], &bars[ci], t, c, n)?;
                    out[ci][n] += lp;
                    bars[ci] = (0..dim).map(|i| g.mean[i] + g.variance.component(i).sqrt() * z[i]).collect();
                }
            }
        }
        Ok(out)
    }
}

/// Single-candidate estimate with a freshly drawn noise bank.
pub fn estimate_log_likelihood(
    x0: &[f64],
    c: &Condition,
    model: &dyn Denoiser,
    sched: &NoiseSchedule,
    cfg: &EstimatorConfig,
) -> Result<LikelihoodEstimate, EstimateError> {
    cfg.validate(sched)?;
    let bank = Estimator::bank_for(cfg, model.dim(), sched);
    let est = Estimator::new(model, sched, cfg, &bank)?;
    est.estimate(x0, c)
}

/// Posterior over `candidates` under a uniform prior, with common random numbers.
pub fn classify(
    x0: &[f64],
    candidates: &[Condition],
    model: &dyn Denoiser,
    sched: &NoiseSchedule,
    cfg: &EstimatorConfig,
) -> Result<Posterior, EstimateError> {
    cfg.validate(sched)?;
    let bank = Estimator::bank_for(cfg, model.dim(), sched);
    let est = Estimator::new(model, sched, cfg, &bank)?;
    est.classify(x0, candidates)
}

/// Negative mean squared ε-prediction error over N·T keyed (t, ε) draws.
pub fn elbo_proxy_score(
    x0: &[f64],
    c: &Condition,
    model: &dyn Denoiser,
    sched: &NoiseSchedule,
    cfg: &EstimatorConfig,
) -> Result<f64, EstimateError> {
    cfg.validate(sched)?;
    if x0.len() != model.dim() {
        return Err(EstimateError::Dimension { expected: model.dim(), got: x0.len() });
    }
    let mut eps = vec![0.0; x0.len()];
    let mut total = 0.0;
    for n in 0..cfg.trials {
        for t in 1..=sched.steps() {
            fill_normal(StreamKey::new(cfg.seed, n as u64, t as u64, lane::ELBO), &mut eps);
            let x_t = q_sample(x0, t, &eps, sched).map_err(|e| EstimateError::Config(e.to_string()))?;
            let pred = model.predict_eps(&x_t, t, c, sched)?;
            let err: f64 = pred.iter().zip(&eps).map(|(p, e)| (p - e) * (p - e)).sum();
            if !err.is_finite() {
                return Err(EstimateError::NonFinite { trial: n, timestep: t, candidate: c.id() });
            }
            total += err;
        }
    }
    Ok(-total / (cfg.trials * sched.steps()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{AnalyticDenoiser, DenoiserOutput, GaussianClassModel};
    use crate::gaussian::Variance;
    use crate::schedule::{build_schedule, ScheduleKind};

    /// Predicts mean x0 with unit variance whatever the input.
    struct Fixed(Vec<f64>);
    impl Denoiser for Fixed {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn predict_eps(&self, x_t: &[f64], _t: usize, _c: &Condition, _s: &NoiseSchedule) -> Result<Vec<f64>, ModelError> {
            Ok(x_t.to_vec())
        }
        fn denoise(&self, _x: &[f64], _t: usize, _c: &Condition, _s: &NoiseSchedule) -> Result<DenoiserOutput, ModelError> {
            Ok(DenoiserOutput { mean: self.0.clone(), variance: Variance::Isotropic(1.0) })
        }
    }

    fn cfg(n: usize, t: usize) -> EstimatorConfig {
        EstimatorConfig { trials: n, timesteps: t, seed: 5, ..Default::default() }
    }

    #[test]
    fn single_step_two_terms() {
        let s = build_schedule(ScheduleKind::Linear, 1, 0.5, 0.5).unwrap();
        let x0 = vec![0.7];
        let est = estimate_log_likelihood(&x0, &Condition::Class(0), &Fixed(x0.clone()), &s, &cfg(1, 1)).unwrap();
        let tr = crate::trajectory::forward_trajectory_with(&x0, &s, 5, 0, Coupling::Markov);
        let expect = standard_normal_log_pdf(&tr.latents[0]) - 0.918_938_533_204_672_7;
        assert!((est.log_likelihood - expect).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_config_checked() {
        let s = build_schedule(ScheduleKind::Linear, 4, 0.1, 0.4).unwrap();
        let x0 = vec![0.2, 0.1];
        let m = Fixed(vec![0.0, 0.0]);
        let a = estimate_log_likelihood(&x0, &Condition::Class(0), &m, &s, &cfg(3, 4)).unwrap();
        let b = estimate_log_likelihood(&x0, &Condition::Class(0), &m, &s, &cfg(3, 4)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            estimate_log_likelihood(&x0, &Condition::Class(0), &m, &s, &cfg(0, 4)),
            Err(EstimateError::Config(_))
        ));
        assert!(matches!(
            estimate_log_likelihood(&x0, &Condition::Class(0), &m, &s, &cfg(1, 3)),
            Err(EstimateError::Config(_))
        ));
        assert!(matches!(
            estimate_log_likelihood(&[f64::NAN, 0.0], &Condition::Class(0), &m, &s, &cfg(1, 4)),
            Err(EstimateError::NonFiniteInput)
        ));
    }

    #[test]
    fn posterior_properties() {
        let p = Posterior::from_log_likelihoods(vec!["a".into(), "b".into()], vec![-3.0, -3.0]);
        assert_eq!(p.probabilities, vec![0.5, 0.5]);
        assert_eq!(p.argmax, 0);
        let p = Posterior::from_log_likelihoods(vec!["a".into()], vec![-1e6]);
        assert_eq!(p.probabilities, vec![1.0]);
        let p = Posterior::from_log_likelihoods(vec!["a".into(), "b".into(), "c".into()], vec![-5.0, 2.0, 2.0]);
        assert_eq!(p.argmax, 1);
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reverse_mode_runs_and_differs() {
        let s = build_schedule(ScheduleKind::Linear, 6, 0.05, 0.5).unwrap();
        let c = Condition::Class(0);
        let gm = GaussianClassModel::new(2, 0.5).unwrap().with_class(&c, vec![1.0, -1.0]).unwrap();
        let den = AnalyticDenoiser::new(gm);
        let fwd = estimate_log_likelihood(&[1.0, -1.0], &c, &den, &s, &cfg(2, 6)).unwrap();
        let rcfg = EstimatorConfig { latent_mode: LatentMode::ReverseAnchored, ..cfg(2, 6) };
        let rev = estimate_log_likelihood(&[1.0, -1.0], &c, &den, &s, &rcfg).unwrap();
        assert!(rev.log_likelihood.is_finite());
        assert_ne!(rev.log_likelihood, fwd.log_likelihood);
        assert_eq!(rev, estimate_log_likelihood(&[1.0, -1.0], &c, &den, &s, &rcfg).unwrap());
    }

    #[test]
    fn elbo_perfect_predictor_is_zero() {
        let s = build_schedule(ScheduleKind::Linear, 8, 0.05, 0.5).unwrap();
        let c = Condition::Class(0);
        let x0 = vec![0.3, -0.2, 0.5];
        let gm = GaussianClassModel::new(3, 0.0).unwrap().with_class(&c, x0.clone()).unwrap();
        let score = elbo_proxy_score(&x0, &c, &AnalyticDenoiser::new(gm), &s, &cfg(3, 8)).unwrap();
        assert!(score.abs() < 1e-12);
    }
}
