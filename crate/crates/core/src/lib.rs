//! Likelihood estimation p(x0 | c) with conditional diffusion models, and the
//! discriminative evaluation built on top of it.

pub mod benchmark;
pub mod cli;
pub mod condition;
pub mod config;
pub mod denoiser;
pub mod estimator;
pub mod eval;
pub mod gaussian;
pub mod linalg;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod schedule;
pub mod trajectory;
pub mod winoground;
