//! Training of [`MlpDenoiser`] on the ε-prediction objective.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mlp::{skip_coefficient, time_features, Grads, Mlp, MlpArch, MlpDenoiser};
use super::SigmaMode;
use crate::condition::{Condition, ConditionError, ConditionVocabulary};
use crate::rng::{lane, StreamKey};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("training set is empty")]
    Empty,
    #[error("sample {index} has dimension {got}, expected {expected}")]
    Dimension { index: usize, expected: usize, got: usize },
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error("loss became non-finite in epoch {epoch}, batch {batch} (last finite loss {last})")]
    Diverged { epoch: usize, batch: usize, last: f64 },
    #[error("model architecture does not match the training data: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConditionedSample {
    pub x0: Vec<f64>,
    pub condition: Condition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub hidden: Vec<usize>,
    pub time_features: usize,
    pub sigma: SigmaMode,
    /// Samples used for the fixed-noise evaluation after each epoch.
    pub probe_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            lr: 1e-3,
            batch_size: 64,
            optimizer: Optimizer::default(),
            hidden: vec![256, 64],
            time_features: 16,
            sigma: SigmaMode::Beta,
            probe_size: 2048,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean ε-MSE over the epoch's minibatches, measured before each update.
    pub train_mse: f64,
    /// ε-MSE on the fixed probe set after the epoch.
    pub probe_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainLog {
    pub initial_mse: f64,
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn final_mse(&self) -> f64 {
        self.epochs.last().map_or(self.initial_mse, |e| e.probe_mse)
    }
}

/// Trains a fresh model.
pub fn train_mlp(
    dataset: &[ConditionedSample],
    vocab: &ConditionVocabulary,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(MlpDenoiser, TrainLog), TrainError> {
    let first = dataset.first().ok_or(TrainError::Empty)?;
    let dim = first.x0.len();
    let arch = MlpArch {
        data_dim: dim,
        cond_dim: vocab.dim(),
        time_features: cfg.time_features,
        hidden: cfg.hidden.clone(),
        data_variance: data_variance(dataset),
        sigma: cfg.sigma,
    };
    let net = Mlp::init(&arch.sizes(), cfg.seed);
    let model = MlpDenoiser::new(arch, vocab.clone(), sched.clone(), net);
    continue_training(model, 0, dataset, cfg)
}

/// Trains `model` for `cfg.epochs` more epochs, numbering them from `start_epoch + 1`.
/// Optimizer state starts fresh.
pub fn continue_training(
    model: MlpDenoiser,
    start_epoch: usize,
    dataset: &[ConditionedSample],
    cfg: &TrainConfig,
) -> Result<(MlpDenoiser, TrainLog), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::Empty);
    }
    let arch = model.arch.clone();
    let vocab = model.vocab.clone();
    let sched = model.schedule.clone();
    let dim = arch.data_dim;
    for (index, s) in dataset.iter().enumerate() {
        if s.x0.len() != dim {
            return Err(TrainError::Dimension { index, expected: dim, got: s.x0.len() });
        }
    }
    let prepared = Prepared::new(dataset, &vocab, &sched, &arch)?;
    let mut net = model.network().clone();

    let probe: Vec<usize> = (0..prepared.len().min(cfg.probe_size.max(1))).collect();
    let initial_mse = prepared.probe_mse(&net, &probe, cfg);
    let mut opt = OptState::new(&net, cfg.optimizer);
    let mut log = TrainLog { initial_mse, epochs: Vec::new() };
    let batch = cfg.batch_size.max(1);

    for epoch in start_epoch + 1..=start_epoch + cfg.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut StreamKey::new(cfg.seed, epoch as u64, 0, lane::SHUFFLE).rng());
        let mut sum = 0.0;
        let mut last = f64::NAN;
        for (bi, chunk) in order.chunks(batch).enumerate() {
            let b = prepared.batch(chunk, |i| StreamKey::new(cfg.seed, epoch as u64, i as u64, lane::TRAIN_NOISE));
            let (loss, grads) = net.mse_grad(&b.input, chunk.len(), &b.offset, &b.target);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: bi, last });
            }
            last = loss;
            sum += loss * chunk.len() as f64;
            opt.step(&mut net, &grads, cfg.lr);
        }
        let probe_mse = prepared.probe_mse(&net, &probe, cfg);
        if !probe_mse.is_finite() {
            return Err(TrainError::Diverged { epoch, batch: order.len().div_ceil(batch), last });
        }
        log.epochs.push(EpochStats { epoch, train_mse: sum / prepared.len() as f64, probe_mse });
    }
    Ok((MlpDenoiser::new(arch, vocab, sched, net), log))
}

/// Variance of all components pooled together.
pub fn data_variance(dataset: &[ConditionedSample]) -> f64 {
    let n: usize = dataset.iter().map(|s| s.x0.len()).sum();
    if n == 0 {
        return 1.0;
    }
    let mean = dataset.iter().flat_map(|s| &s.x0).sum::<f64>() / n as f64;
    let var = dataset.iter().flat_map(|s| &s.x0).map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if var > 0.0 {
        var
    } else {
        1.0
    }
}

struct Batch {
    input: Vec<f32>,
    offset: Vec<f32>,
    target: Vec<f32>,
}

/// Samples in canonical order with cached embeddings.
struct Prepared<'a> {
    samples: Vec<&'a ConditionedSample>,
    embeddings: Vec<Vec<f32>>,
    time_feats: Vec<Vec<f32>>,
    sched: &'a NoiseSchedule,
    arch: &'a MlpArch,
}

impl<'a> Prepared<'a> {
    fn new(
        dataset: &'a [ConditionedSample],
        vocab: &ConditionVocabulary,
        sched: &'a NoiseSchedule,
        arch: &'a MlpArch,
    ) -> Result<Self, TrainError> {
        if vocab.dim() != arch.cond_dim {
            return Err(TrainError::Mismatch(format!(
                "vocabulary dimension {} vs network {}",
                vocab.dim(),
                arch.cond_dim
            )));
        }
        let mut keyed: Vec<(Vec<u64>, &ConditionedSample)> = dataset
            .iter()
            .map(|s| {
                let mut k: Vec<u64> = s.x0.iter().map(|v| v.to_bits()).collect();
                k.extend(s.condition.id().bytes().map(u64::from));
                (k, s)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        let samples: Vec<&ConditionedSample> = keyed.into_iter().map(|(_, s)| s).collect();
        let embeddings = samples
            .iter()
            .map(|s| vocab.embed(&s.condition).map(|e| e.into_iter().map(|v| v as f32).collect()))
            .collect::<Result<_, _>>()?;
        let time_feats = (1..=sched.steps())
            .map(|t| time_features(t as f64, arch.time_features).into_iter().map(|v| v as f32).collect())
            .collect();
        Ok(Self { samples, embeddings, time_feats, sched, arch })
    }

    fn len(&self) -> usize {
        self.samples.len()
    }

    fn batch(&self, idx: &[usize], key: impl Fn(usize) -> StreamKey) -> Batch {
        let d = self.arch.data_dim;
        let mut input = Vec::with_capacity(idx.len() * self.arch.input_dim());
        let mut offset = Vec::with_capacity(idx.len() * d);
        let mut target = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            let mut rng = key(i).rng();
            let t = rng.random_range(1..=self.sched.steps());
            let ab = self.sched.alpha_bar(t);
            let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
            let skip = skip_coefficient(ab, self.arch.data_variance);
            let x0 = &self.samples[i].x0;
            let start = input.len();
            for &x in x0 {
                let e: f64 = rng.sample(StandardNormal);
                let xt = a * x + b * e;
                input.push(xt as f32);
                offset.push((skip * xt) as f32);
                target.push(e as f32);
            }
            debug_assert_eq!(input.len() - start, d);
            input.extend_from_slice(&self.embeddings[i]);
            input.extend_from_slice(&self.time_feats[t - 1]);
        }
        Batch { input, offset, target }
    }

    fn probe_mse(&self, net: &Mlp<f32>, probe: &[usize], cfg: &TrainConfig) -> f64 {
        let mut sum = 0.0;
        let d = self.arch.data_dim;
        for chunk in probe.chunks(256) {
            let b = self.batch(chunk, |i| StreamKey::new(cfg.seed, i as u64, 0, lane::TRAIN_STEP));
            let out = net.forward(&b.input, chunk.len());
            for ((o, s), e) in out.iter().zip(&b.offset).zip(&b.target) {
                let r = (*o + *s - *e) as f64;
                sum += r * r;
            }
        }
        sum / (probe.len() * d) as f64
    }
}

enum OptState {
    Adam { m: Grads<f32>, v: Grads<f32>, step: i32, beta1: f64, beta2: f64, eps: f64 },
    Sgd { vel: Grads<f32>, momentum: f64 },
}

fn zeros_like(net: &Mlp<f32>) -> Grads<f32> {
    Grads {
        weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
        biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
    }
}

impl OptState {
    fn new(net: &Mlp<f32>, opt: Optimizer) -> Self {
        match opt {
            Optimizer::Adam { beta1, beta2, eps } => {
                OptState::Adam { m: zeros_like(net), v: zeros_like(net), step: 0, beta1, beta2, eps }
            }
            Optimizer::SgdMomentum { momentum } => OptState::Sgd { vel: zeros_like(net), momentum },
        }
    }

    fn step(&mut self, net: &mut Mlp<f32>, g: &Grads<f32>, lr: f64) {
        let params = net.weights.iter_mut().chain(net.biases.iter_mut());
        let grads = g.weights.iter().chain(&g.biases);
        match self {
            OptState::Adam { m, v, step, beta1, beta2, eps } => {
                *step += 1;
                let (b1, b2) = (*beta1 as f32, *beta2 as f32);
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                let rate = (lr * c2.sqrt() / c1) as f32;
                let eps = (*eps * c2.sqrt()) as f32;
                let ms = m.weights.iter_mut().chain(m.biases.iter_mut());
                let vs = v.weights.iter_mut().chain(v.biases.iter_mut());
                for (((p, g), m), v) in params.zip(grads).zip(ms).zip(vs) {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        p[i] -= rate * m[i] / (v[i].sqrt() + eps);
                    }
                }
            }
            OptState::Sgd { vel, momentum } => {
                let mu = *momentum as f32;
                let lr = lr as f32;
                let vs = vel.weights.iter_mut().chain(vel.biases.iter_mut());
                for ((p, g), v) in params.zip(grads).zip(vs) {
                    for i in 0..p.len() {
                        v[i] = mu * v[i] + g[i];
                        p[i] -= lr * v[i];
                    }
                }
            }
        }
    }
}
