//! Closed-form denoiser for isotropic Gaussian class-conditional data.
//!
//! Data for class c is N(m_c, s²I). The reverse transition of the forward
//! chain is then Gaussian with mean c1·E[x0|x_t] + c2·x_t and variance
//! β̃_t + c1²·Var(x0|x_t).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_input, Denoiser, DenoiserOutput, ModelError, PathScorer};
use crate::condition::Condition;
use crate::gaussian::{Variance, LN_2PI};
use crate::linalg::{gemm, Op};
use crate::schedule::NoiseSchedule;
use crate::trajectory::{dot, NoiseBank};

/// Lower bound on the reverse variance; only reached when s² is zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GaussianClassModel {
    pub class_means: BTreeMap<String, Vec<f64>>,
    pub class_var: f64,
    pub dim: usize,
}

impl GaussianClassModel {
    /// `class_var` may be zero (point-mass classes); negative values are rejected.
    pub fn new(dim: usize, class_var: f64) -> Result<Self, ModelError> {
        if !(class_var >= 0.0) || !class_var.is_finite() {
            return Err(ModelError::ClassVariance(class_var));
        }
        Ok(Self { class_means: BTreeMap::new(), class_var, dim })
    }

    pub fn insert(&mut self, c: &Condition, mean: Vec<f64>) -> Result<(), ModelError> {
        if mean.len() != self.dim {
            return Err(ModelError::Dimension { expected: self.dim, got: mean.len() });
        }
        self.class_means.insert(c.id(), mean);
        Ok(())
    }

    pub fn with_class(mut self, c: &Condition, mean: Vec<f64>) -> Result<Self, ModelError> {
        self.insert(c, mean)?;
        Ok(self)
    }

    pub fn mean(&self, c: &Condition) -> Result<&[f64], ModelError> {
        self.class_means
            .get(&c.id())
            .map(Vec::as_slice)
            .ok_or_else(|| ModelError::UnknownCondition(c.id()))
    }

    /// Gain k on (x_t − √ᾱ·m) in E[x0 | x_t].
    pub fn gain(&self, alpha_bar: f64) -> f64 {
        let s2 = self.class_var;
        alpha_bar.sqrt() * s2 / (alpha_bar * s2 + 1.0 - alpha_bar)
    }

    /// Var(x0 | x_t) per component.
    pub fn posterior_var(&self, alpha_bar: f64) -> f64 {
        let s2 = self.class_var;
        s2 * (1.0 - alpha_bar) / (alpha_bar * s2 + 1.0 - alpha_bar)
    }
}

/// E[x0 | x_t, c] = m_c + k·(x_t − √ᾱ_t·m_c).
pub fn analytic_posterior_x0(
    x_t: &[f64],
    t: usize,
    c: &Condition,
    gm: &GaussianClassModel,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>, ModelError> {
    check_input(gm.dim, x_t, t, sched)?;
    let m = gm.mean(c)?;
    Ok(posterior_x0_with(x_t, m, gm, sched.alpha_bar(t)))
}

fn posterior_x0_with(x_t: &[f64], m: &[f64], gm: &GaussianClassModel, alpha_bar: f64) -> Vec<f64> {
    let k = gm.gain(alpha_bar);
    let a = alpha_bar.sqrt();
    m.iter().zip(x_t).map(|(m, x)| m + k * (x - a * m)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticDenoiser {
    pub model: GaussianClassModel,
}

impl AnalyticDenoiser {
    pub fn new(model: GaussianClassModel) -> Self {
        Self { model }
    }

    /// Exact reverse variance at step t.
    pub fn reverse_var(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        let (c1, _, tilde) = sched.posterior_coefficients(t);
        (tilde + c1 * c1 * self.model.posterior_var(sched.alpha_bar(t))).max(VARIANCE_FLOOR)
    }
}

impl Denoiser for AnalyticDenoiser {
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn predict_eps(&self, x_t: &[f64], t: usize, c: &Condition, sched: &NoiseSchedule)
        -> Result<Vec<f64>, ModelError> {
        let x0 = analytic_posterior_x0(x_t, t, c, &self.model, sched)?;
        let ab = sched.alpha_bar(t);
        let s = (1.0 - ab).sqrt();
        Ok(x_t.iter().zip(&x0).map(|(x, x0)| (x - ab.sqrt() * x0) / s).collect())
    }

    fn denoise(&self, x_t: &[f64], t: usize, c: &Condition, sched: &NoiseSchedule)
        -> Result<DenoiserOutput, ModelError> {
        let x0 = analytic_posterior_x0(x_t, t, c, &self.model, sched)?;
        let (c1, c2, _) = sched.posterior_coefficients(t);
        let mean = x0.iter().zip(x_t).map(|(x0, x)| c1 * x0 + c2 * x).collect();
        Ok(DenoiserOutput { mean, variance: Variance::Isotropic(self.reverse_var(t, sched)) })
    }

    fn path_scorer<'a>(&'a self, bank: &'a NoiseBank, sched: &'a NoiseSchedule)
        -> Option<Box<dyn PathScorer + 'a>> {
        if bank.dim() != self.model.dim || bank.steps() != sched.steps() {
            return None;
        }
        Some(Box::new(AnalyticPathScorer::new(self, bank, sched)))
    }
}

/// Per-step scalars of the residual x_{t−1} − μ = a·x0 + z_{t−1} − A·z_t − B·m.
struct StepCoef {
    a: f64,
    big_a: f64,
    big_b: f64,
    var: f64,
}

struct AnalyticPathScorer<'a> {
    den: &'a AnalyticDenoiser,
    bank: &'a NoiseBank,
    coefs: Vec<StepCoef>,
}

impl<'a> AnalyticPathScorer<'a> {
    fn new(den: &'a AnalyticDenoiser, bank: &'a NoiseBank, sched: &'a NoiseSchedule) -> Self {
        let coefs = (1..=sched.steps())
            .map(|t| {
                let ab = sched.alpha_bar(t);
                let k = den.model.gain(ab);
                let (c1, c2, _) = sched.posterior_coefficients(t);
                let big_a = c2 + c1 * k;
                let big_b = c1 * (1.0 - k * ab.sqrt());
                let a = sched.alpha_bar(t - 1).sqrt() - big_a * ab.sqrt();
                StepCoef { a, big_a, big_b, var: den.reverse_var(t, sched) }
            })
            .collect();
        Self { den, bank, coefs }
    }
}

impl PathScorer for AnalyticPathScorer<'_> {
    fn transition_logs(&self, x0: &[f64], candidates: &[Condition]) -> Result<Vec<Vec<f64>>, ModelError> {
        let dim = self.bank.dim();
        if x0.len() != dim {
            return Err(ModelError::Dimension { expected: dim, got: x0.len() });
        }
        let means: Vec<&[f64]> = candidates.iter().map(|c| self.den.model.mean(c)).collect::<Result<_, _>>()?;
        let ncand = candidates.len();
        let trials = self.bank.trials();
        let steps = self.bank.steps();
        let rows = trials * (steps + 1);

        // Rows of the bank against x0 and every class mean at once.
        let mut rhs = Vec::with_capacity(dim * (ncand + 1));
        for i in 0..dim {
            rhs.push(x0[i]);
            for m in &means {
                rhs.push(m[i]);
            }
        }
        let width = ncand + 1;
        let mut proj = vec![0.0; rows * width];
        gemm(Op::N, Op::N, rows, dim, width, 1.0, self.bank.matrix(), &rhs, 0.0, &mut proj);

        let xx = dot(x0, x0);
        let per_class: Vec<(f64, f64)> = means.iter().map(|m| (dot(m, m), dot(m, x0))).collect();
        let d = dim as f64;
        let mut out = vec![vec![0.0; trials]; ncand];
        for n in 0..trials {
            let row = |t: usize| &proj[(n * (steps + 1) + t) * width..(n * (steps + 1) + t + 1) * width];
            for t in 1..=steps {
                let sc = &self.coefs[t - 1];
                let (prev, cur) = (row(t - 1), row(t));
                let zz_prev = self.bank.sq_norm(n, t - 1);
                let zz_cur = self.bank.sq_norm(n, t);
                let cross = self.bank.cross(n, t);
                let (a, big_a, big_b) = (sc.a, sc.big_a, sc.big_b);
                let base = a * a * xx + zz_prev + big_a * big_a * zz_cur + 2.0 * a * prev[0]
                    - 2.0 * a * big_a * cur[0]
                    - 2.0 * big_a * cross;
                let norm = -0.5 * d * (LN_2PI + sc.var.ln());
                for (ci, (mm, mx)) in per_class.iter().enumerate() {
                    let sq = base + big_b * big_b * mm - 2.0 * a * big_b * mx - 2.0 * big_b * prev[ci + 1]
                        + 2.0 * big_a * big_b * cur[ci + 1];
                    out[ci][n] += norm - 0.5 * sq.max(0.0) / sc.var;
                }
            }
        }
        Ok(out)
    }
}
