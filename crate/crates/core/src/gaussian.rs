//! Diagonal Gaussian densities and log-space helpers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("dimension mismatch: x has {x}, mean has {mean}")]
    DimensionMismatch { x: usize, mean: usize },
    #[error("diagonal variance has {var} entries but mean has {mean}")]
    VarianceLength { var: usize, mean: usize },
    #[error("variance component {index} is not positive ({value})")]
    NonPositiveVariance { index: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Variance {
    Isotropic(f64),
    Diagonal(Vec<f64>),
}

impl Variance {
    pub fn component(&self, i: usize) -> f64 {
        match self {
            Variance::Isotropic(v) => *v,
            Variance::Diagonal(v) => v[i],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), GaussianError> {
        match self {
            Variance::Isotropic(v) => {
                if !(*v > 0.0) || !v.is_finite() {
                    return Err(GaussianError::NonPositiveVariance { index: 0, value: *v });
                }
            }
            Variance::Diagonal(v) => {
                if v.len() != dim {
                    return Err(GaussianError::VarianceLength { var: v.len(), mean: dim });
                }
                if let Some((index, &value)) =
                    v.iter().enumerate().find(|(_, &s)| !(s > 0.0) || !s.is_finite())
                {
                    return Err(GaussianError::NonPositiveVariance { index, value });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub variance: Variance,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, variance: Variance) -> Result<Self, GaussianError> {
        variance.validate(mean.len())?;
        Ok(Self { mean, variance })
    }

    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self, GaussianError> {
        Self::new(mean, Variance::Isotropic(var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Log-density of `x` under `g`.
pub fn gaussian_log_pdf(x: &[f64], g: &DiagGaussian) -> Result<f64, GaussianError> {
    if x.len() != g.mean.len() {
        return Err(GaussianError::DimensionMismatch { x: x.len(), mean: g.mean.len() });
    }
    g.variance.validate(g.mean.len())?;
    let d = x.len() as f64;
    Ok(match &g.variance {
        Variance::Isotropic(v) => {
            let sq: f64 = x.iter().zip(&g.mean).map(|(a, m)| (a - m) * (a - m)).sum();
            isotropic_log_pdf_from_sq(sq, x.len(), *v)
        }
        Variance::Diagonal(vs) => {
            let mut acc = 0.0;
            for ((a, m), v) in x.iter().zip(&g.mean).zip(vs) {
                acc += v.ln() + (a - m) * (a - m) / v;
            }
            -0.5 * (d * LN_2PI + acc)
        }
    })
}

/// Isotropic log-density given the squared residual norm.
pub fn isotropic_log_pdf_from_sq(sq: f64, dim: usize, var: f64) -> f64 {
    let d = dim as f64;
    -0.5 * (d * (LN_2PI + var.ln()) + sq / var)
}

/// Standard-normal log-density.
pub fn standard_normal_log_pdf(x: &[f64]) -> f64 {
    let sq: f64 = x.iter().map(|v| v * v).sum();
    isotropic_log_pdf_from_sq(sq, x.len(), 1.0)
}

/// `log Σ exp(v)`, stable for large magnitudes. Empty input gives -inf.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log (1/N) Σ exp(v)`.
pub fn log_mean_exp(v: &[f64]) -> f64 {
    log_sum_exp(v) - (v.len() as f64).ln()
}
