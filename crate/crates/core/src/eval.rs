//! Suite evaluation on a worker pool. Work is split per example and results
//! are collected in input order, so output does not depend on the pool size.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::{oracle_model, BenchmarkError, ItmExample, SwapPair, Task, TaskSpec};
use crate::denoiser::Denoiser;
use crate::estimator::{elbo_proxy_score, EstimateError, Estimator, EstimatorConfig, LikelihoodEstimate, Posterior};
use crate::gaussian::log_mean_exp;
use crate::metrics::{accuracy, MetricsError, TaskResult};
use crate::schedule::NoiseSchedule;
use crate::trajectory::NoiseBank;
use crate::winoground::{image_text_scores, score_pair, PairScores, Scorer, WinogroundError, WinogroundScores};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("example {example}: {source}")]
    Estimate { example: String, source: EstimateError },
    #[error("example {example}: {source}")]
    Oracle { example: String, source: BenchmarkError },
    #[error("{field} mismatch: {message}")]
    Mismatch { field: &'static str, message: String },
    #[error("no examples to evaluate")]
    Empty,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Winoground(#[from] WinogroundError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

impl EvalError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, EvalError::Estimate { source: EstimateError::NonFinite { .. }, .. })
    }
}

/// Where the denoiser for an example comes from.
pub enum ModelSource<'a> {
    /// One model for every example.
    Shared(&'a dyn Denoiser),
    /// Render-mean analytic oracle built from each example's candidates.
    Oracle { class_var: f64, image_size: usize },
}

impl ModelSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSource::Shared(_) => "shared",
            ModelSource::Oracle { .. } => "oracle",
        }
    }

    fn with_model<R>(
        &self,
        id: &str,
        conds: &[crate::condition::Condition],
        f: impl FnOnce(&dyn Denoiser) -> Result<R, EvalError>,
    ) -> Result<R, EvalError> {
        match self {
            ModelSource::Shared(m) => f(*m),
            ModelSource::Oracle { class_var, image_size } => {
                let m = oracle_model(conds, *image_size, *class_var)
                    .map_err(|source| EvalError::Oracle { example: id.to_string(), source })?;
                f(&m)
            }
        }
    }
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExampleOutcome {
    pub example_id: String,
    pub task: Task,
    pub suite_seed: u64,
    pub correct_index: usize,
    pub posterior: Posterior,
    /// One per candidate; empty for the ELBO scorer.
    pub estimates: Vec<LikelihoodEstimate>,
}

impl ExampleOutcome {
    pub fn prediction(&self) -> usize {
        self.posterior.argmax
    }
}

pub struct Evaluator<'a> {
    pub source: ModelSource<'a>,
    pub sched: &'a NoiseSchedule,
    pub scorer: Scorer,
    /// Estimator settings; the seed is replaced by each example's suite seed.
    pub cfg: EstimatorConfig,
}

impl Evaluator<'_> {
    fn cfg_for(&self, seed: u64) -> EstimatorConfig {
        EstimatorConfig { seed, ..self.cfg.clone() }
    }

    fn check_dim(&self, dim: usize) -> Result<(), EvalError> {
        if let ModelSource::Shared(m) = self.source {
            if m.dim() != dim {
                return Err(EvalError::Mismatch {
                    field: "imageSize",
                    message: format!("data has dimension {dim}, model expects {}", m.dim()),
                });
            }
        }
        Ok(())
    }

    /// Scores every example; the output order matches `examples`.
    pub fn evaluate(&self, examples: &[ItmExample], pool: &rayon::ThreadPool) -> Result<Vec<ExampleOutcome>, EvalError> {
        let first = examples.first().ok_or(EvalError::Empty)?;
        let dim = first.image.image.len();
        self.check_dim(dim)?;
        let mut banks: BTreeMap<u64, NoiseBank> = BTreeMap::new();
        if self.scorer == Scorer::SelfEval {
            for e in examples {
                if e.image.image.len() != dim {
                    return Err(EvalError::Mismatch { field: "imageSize", message: format!("example {} differs", e.id) });
                }
                banks.entry(e.suite_seed).or_insert_with(|| {
                    Estimator::bank_for(&self.cfg_for(e.suite_seed), dim, self.sched)
                });
            }
        }
        pool.install(|| examples.par_iter().map(|e| self.one(e, &banks)).collect())
    }

    fn one(&self, e: &ItmExample, banks: &BTreeMap<u64, NoiseBank>) -> Result<ExampleOutcome, EvalError> {
        let x0 = e.image.data();
        let cfg = self.cfg_for(e.suite_seed);
        let wrap = |source| EvalError::Estimate { example: e.id.clone(), source };
        let (posterior, estimates) = self.source.with_model(&e.id, &e.candidates, |model| match self.scorer {
            Scorer::SelfEval => {
                let est = Estimator::new(model, self.sched, &cfg, &banks[&e.suite_seed]).map_err(wrap)?;
                let estimates = est.estimate_many(&x0, &e.candidates).map_err(wrap)?;
                let post = Posterior::from_log_likelihoods(
                    e.candidates.iter().map(|c| c.id()).collect(),
                    estimates.iter().map(|x| x.log_likelihood).collect(),
                );
                Ok((post, estimates))
            }
            Scorer::Elbo => {
                let scores = e
                    .candidates
                    .iter()
                    .map(|c| elbo_proxy_score(&x0, c, model, self.sched, &cfg))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(wrap)?;
                Ok((Posterior::from_log_likelihoods(e.candidates.iter().map(|c| c.id()).collect(), scores), Vec::new()))
            }
        })?;
        Ok(ExampleOutcome {
            example_id: e.id.clone(),
            task: e.task,
            suite_seed: e.suite_seed,
            correct_index: e.correct_index,
            posterior,
            estimates,
        })
    }

    /// Image/text/group scores on swap pairs, with one model for both images.
    pub fn winoground(&self, pairs: &[SwapPair], pool: &rayon::ThreadPool) -> Result<WinogroundScores, EvalError> {
        let first = pairs.first().ok_or(EvalError::Empty)?;
        let dim = first.a.image.len();
        self.check_dim(dim)?;
        let bank = Estimator::bank_for(&self.cfg, dim, self.sched);
        let scores: Vec<PairScores> = pool.install(|| {
            pairs
                .par_iter()
                .map(|p| {
                    let caps = [p.a.condition.clone(), p.b.condition.clone()];
                    let (xa, xb) = (p.a.data(), p.b.data());
                    self.source.with_model(&p.id, &caps, |m| {
                        score_pair(self.scorer, [m, m], [&xa, &xb], [&caps[0], &caps[1]], self.sched, &self.cfg, &bank)
                            .map_err(|source| EvalError::Estimate { example: p.id.clone(), source })
                    })
                })
                .collect::<Result<_, _>>()
        })?;
        Ok(image_text_scores(&scores)?)
    }
}

/// Accuracy per repeat seed, aggregated into one result per task.
pub fn summarize(task: Task, outcomes: &[&ExampleOutcome]) -> Result<TaskResult, EvalError> {
    let mut by_seed: BTreeMap<u64, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| o.task == task) {
        let e = by_seed.entry(o.suite_seed).or_default();
        e.0.push(o.prediction());
        e.1.push(o.correct_index);
    }
    if by_seed.is_empty() {
        return Err(EvalError::Empty);
    }
    let seeds: Vec<u64> = by_seed.keys().copied().collect();
    let accs = by_seed.values().map(|(p, c)| accuracy(p, c)).collect::<Result<Vec<_>, _>>()?;
    Ok(TaskResult::from_repeats(task.name(), TaskSpec::new(task).chance_pct(), seeds, accs)?)
}

/// Summary of log-mean-exp minus mean over every (example, candidate) estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JensenSummary {
    pub estimates: usize,
    pub min_gap: f64,
    pub max_gap: f64,
    pub ln_n: f64,
    /// Estimates whose gap falls outside [0, ln N].
    pub violations: usize,
}

pub fn jensen_summary(outcomes: &[ExampleOutcome]) -> Option<JensenSummary> {
    let mut s: Option<JensenSummary> = None;
    for e in outcomes.iter().flat_map(|o| &o.estimates) {
        let n = e.per_trial_logs.len() as f64;
        let mean = e.per_trial_logs.iter().sum::<f64>() / n;
        let gap = log_mean_exp(&e.per_trial_logs) - mean;
        // Rounding slack relative to the magnitude of the logs.
        let tol = 1e-12 * mean.abs().max(1.0);
        let bad = !(gap >= -tol && gap <= n.ln() + tol);
        let cur = s.get_or_insert(JensenSummary { estimates: 0, min_gap: gap, max_gap: gap, ln_n: n.ln(), violations: 0 });
        cur.estimates += 1;
        cur.min_gap = cur.min_gap.min(gap);
        cur.max_gap = cur.max_gap.max(gap);
        cur.violations += usize::from(bad);
    }
    s
}
