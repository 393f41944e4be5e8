//! Run configuration and its canonical hashes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::benchmark::render::check_size;
use crate::benchmark::{Task, DEFAULT_IMAGE_SIZE};
use crate::denoiser::TrainConfig;
use crate::estimator::{Aggregation, EstimatorConfig, LatentMode};
use crate::schedule::{build_schedule, NoiseSchedule, ScheduleError, ScheduleKind};
use crate::trajectory::Coupling;
use crate::winoground::Scorer;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for {field}: {message}")]
    Field { field: &'static str, message: String },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ScheduleParams {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { kind: ScheduleKind::Linear, steps: 100, beta_min: 1e-3, beta_max: 0.2 }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule, ScheduleError> {
        build_schedule(self.kind, self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct EstimatorParams {
    #[serde(rename = "N")]
    pub trials: usize,
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub latent_mode: LatentMode,
    pub aggregation: Aggregation,
    pub coupling: Coupling,
    pub proposal_correction: bool,
    pub scorer: Scorer,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            trials: 10,
            timesteps: 100,
            latent_mode: LatentMode::default(),
            aggregation: Aggregation::default(),
            coupling: Coupling::default(),
            proposal_correction: false,
            scorer: Scorer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct BenchmarkParams {
    pub image_size: usize,
    pub suite_size: usize,
    pub repeats: usize,
    pub tasks: Vec<Task>,
    pub winoground_pairs: usize,
    pub train_size: usize,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            image_size: DEFAULT_IMAGE_SIZE,
            suite_size: 1000,
            repeats: 3,
            tasks: Task::ALL.to_vec(),
            winoground_pairs: 200,
            train_size: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub schedule: ScheduleParams,
    pub estimator: EstimatorParams,
    pub benchmark: BenchmarkParams,
    pub trainer: TrainConfig,
    /// Not part of any hash.
    pub output_dir: PathBuf,
    /// Not part of any hash.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            schedule: ScheduleParams::default(),
            estimator: EstimatorParams::default(),
            benchmark: BenchmarkParams::default(),
            trainer: TrainConfig::default(),
            output_dir: PathBuf::from("selfeval-out"),
            workers: 1,
        }
    }
}

/// sha256 hex of the compact JSON with object keys sorted.
pub fn canonical_hash(v: &Value) -> String {
    // serde_json's map is ordered by key unless `preserve_order` is enabled.
    let bytes = serde_json::to_vec(v).expect("json values serialize");
    hex(&Sha256::digest(bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let read = |message: String| ConfigError::Read { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| read(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| read(e.to_string()))
    }

    fn value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    fn pick(&self, keys: &[&str]) -> Value {
        let Value::Object(all) = self.value() else { unreachable!("config is an object") };
        Value::Object(all.into_iter().filter(|(k, _)| keys.contains(&k.as_str())).collect())
    }

    /// Hash of everything except output directory and worker count.
    pub fn config_hash(&self) -> String {
        canonical_hash(&self.pick(&["masterSeed", "schedule", "estimator", "benchmark", "trainer"]))
    }

    /// Hash of the parameters that determine generated datasets.
    pub fn data_hash(&self) -> String {
        canonical_hash(&self.pick(&["masterSeed", "benchmark"]))
    }

    /// Hash of what a checkpoint must agree with to be evaluated: seed,
    /// training schedule, image size and training-set size. Optimizer
    /// settings are left out so resumed runs keep their hash.
    pub fn train_hash(&self) -> String {
        let mut v = self.pick(&["masterSeed", "schedule"]);
        v["imageSize"] = self.benchmark.image_size.into();
        v["trainSize"] = self.benchmark.train_size.into();
        canonical_hash(&v)
    }

    /// Seeds of the repeat protocol: s, s+1, s+2, ...
    pub fn repeat_seeds(&self) -> Vec<u64> {
        (0..self.benchmark.repeats as u64).map(|r| self.master_seed.wrapping_add(r)).collect()
    }

    pub fn training_schedule(&self) -> Result<NoiseSchedule, ScheduleError> {
        self.schedule.build()
    }

    /// The schedule at the estimator's T, rescaled from the configured one.
    pub fn eval_schedule(&self) -> Result<NoiseSchedule, ScheduleError> {
        let base = self.schedule.build()?;
        if self.estimator.timesteps == base.steps() {
            Ok(base)
        } else {
            base.rescaled(self.estimator.timesteps)
        }
    }

    pub fn estimator_config(&self, seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            trials: self.estimator.trials,
            timesteps: self.estimator.timesteps,
            seed,
            latent_mode: self.estimator.latent_mode,
            aggregation: self.estimator.aggregation,
            coupling: self.estimator.coupling,
            proposal_correction: self.estimator.proposal_correction,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.estimator.trials == 0 {
            return Err(field("estimator.N", "must be at least 1"));
        }
        if self.estimator.timesteps == 0 {
            return Err(field("estimator.T", "must be at least 1"));
        }
        let sched = self.eval_schedule()?;
        if !sched.is_near_pure_noise() {
            return Err(field(
                "schedule",
                format!("terminal alpha-bar {:.4} must be below 0.05 for a standard-normal x_T", sched.terminal_alpha_bar()),
            ));
        }
        check_size(self.benchmark.image_size)
            .map_err(|_| field("benchmark.imageSize", "needs a multiple of 4, at least 16"))?;
        if self.benchmark.suite_size == 0 {
            return Err(field("benchmark.suiteSize", "must be at least 1"));
        }
        if self.benchmark.repeats == 0 {
            return Err(field("benchmark.repeats", "must be at least 1"));
        }
        if self.benchmark.tasks.is_empty() {
            return Err(field("benchmark.tasks", "must name at least one task"));
        }
        if self.workers == 0 {
            return Err(field("workers", "must be at least 1"));
        }
        if self.trainer.batch_size == 0 {
            return Err(field("trainer.batchSize", "must be at least 1"));
        }
        if !(self.trainer.lr >= 0.0 && self.trainer.lr.is_finite()) {
            return Err(field("trainer.lr", "must be finite and non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_workers_and_output() {
        let a = RunConfig::default();
        let b = RunConfig { workers: 8, output_dir: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.config_hash(), b.config_hash());
        let c = RunConfig { master_seed: 1, ..a.clone() };
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn sections_hash_independently() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.estimator.trials = 3;
        assert_eq!(a.data_hash(), b.data_hash());
        assert_eq!(a.train_hash(), b.train_hash());
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn json_roundtrip_and_defaults() {
        let a = RunConfig::default();
        let j = serde_json::to_string(&a).unwrap();
        let b: RunConfig = serde_json::from_str(&j).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.config_hash(), b.config_hash());
        let partial: RunConfig = serde_json::from_str(r#"{"masterSeed": 4, "estimator": {"N": 2}}"#).unwrap();
        assert_eq!(partial.estimator.trials, 2);
        assert_eq!(partial.estimator.timesteps, 100);
    }

    #[test]
    fn canonical_hash_is_key_order_free() {
        let x: Value = serde_json::from_str(r#"{"b": 1, "a": [1.5, "z"]}"#).unwrap();
        let y: Value = serde_json::from_str(r#"{"a": [1.5, "z"], "b": 1}"#).unwrap();
        assert_eq!(canonical_hash(&x), canonical_hash(&y));
        // sha256 of the compact text, as any external tool computes it.
        assert_eq!(
            canonical_hash(&x),
            hex(&Sha256::digest(br#"{"a":[1.5,"z"],"b":1}"#))
        );
    }

    #[test]
    fn validation_names_fields() {
        let mut c = RunConfig::default();
        c.estimator.trials = 0;
        assert!(matches!(c.validate(), Err(ConfigError::Field { field: "estimator.N", .. })));
        let mut c = RunConfig::default();
        c.schedule.beta_min = 1e-4;
        c.schedule.beta_max = 0.02;
        assert!(matches!(c.validate(), Err(ConfigError::Field { field: "schedule", .. })));
        let mut c = RunConfig::default();
        c.estimator.timesteps = 25;
        assert!(c.validate().is_ok());
        assert_eq!(c.eval_schedule().unwrap().steps(), 25);
        RunConfig::default().validate().unwrap();
    }
}
