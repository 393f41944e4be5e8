//! Synthetic six-task benchmark: micro-image rendering, candidate synthesis,
//! swap pairs and Gaussian fixtures.

pub mod dataset;
pub mod fixtures;
pub mod render;
pub mod tasks;

use thiserror::Error;

pub use fixtures::{
    build_winoground_pairs, oracle_model, pooled_blind_model, scale_mismatch_fixture, training_set,
    ScaleMismatchFixture, ScalePair, SwapKind, SwapPair, ORACLE_CLASS_VAR,
};
pub use render::{render_mean, render_scene, MicroScene, DEFAULT_IMAGE_SIZE};
pub use tasks::{build_task_suite, make_itm_example, ItmExample, Task, TaskSpec};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("image size {0} unsupported (needs a multiple of 4, at least 16)")]
    ImageSize(usize),
    #[error("impossible placement: {0}")]
    Placement(String),
    #[error("condition is not a scene")]
    NotAScene,
    #[error("insufficient vocabulary: {0}")]
    Vocabulary(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
}
