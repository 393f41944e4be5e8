//! Paired-contrast image and text scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::Condition;
use crate::denoiser::Denoiser;
use crate::estimator::{elbo_proxy_score, EstimateError, Estimator, EstimatorConfig};
use crate::schedule::NoiseSchedule;
use crate::trajectory::NoiseBank;

#[derive(Debug, Error)]
pub enum WinogroundError {
    #[error("no pairs to score")]
    Empty,
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Scorer {
    #[default]
    #[serde(rename = "selfeval")]
    SelfEval,
    Elbo,
}

impl Scorer {
    pub fn name(self) -> &'static str {
        match self {
            Scorer::SelfEval => "selfeval",
            Scorer::Elbo => "elbo",
        }
    }
}

/// `s[i][j]` is the score of caption j for image i.
pub type PairScores = [[f64; 2]; 2];

/// Fractions of pairs passing each test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WinogroundScores {
    pub image_score: f64,
    pub text_score: f64,
    pub group_score: f64,
}

impl WinogroundScores {
    pub fn as_pct(&self) -> Self {
        Self { image_score: 100.0 * self.image_score, text_score: 100.0 * self.text_score, group_score: 100.0 * self.group_score }
    }
}

/// Strict comparisons throughout, so ties count as failures.
pub fn image_text_scores(scores: &[PairScores]) -> Result<WinogroundScores, WinogroundError> {
    if scores.is_empty() {
        return Err(WinogroundError::Empty);
    }
    let (mut img, mut txt, mut grp) = (0usize, 0usize, 0usize);
    for s in scores {
        let text_ok = s[0][0] > s[0][1] && s[1][1] > s[1][0];
        let image_ok = s[0][0] > s[1][0] && s[1][1] > s[0][1];
        txt += usize::from(text_ok);
        img += usize::from(image_ok);
        grp += usize::from(text_ok && image_ok);
    }
    let n = scores.len() as f64;
    Ok(WinogroundScores { image_score: img as f64 / n, text_score: txt as f64 / n, group_score: grp as f64 / n })
}

/// Scores both captions on both images. `models[i]` scores image i, and
/// `bank` must match `cfg` and the data dimension.
pub fn score_pair(
    scorer: Scorer,
    models: [&dyn Denoiser; 2],
    images: [&[f64]; 2],
    captions: [&Condition; 2],
    sched: &NoiseSchedule,
    cfg: &EstimatorConfig,
    bank: &NoiseBank,
) -> Result<PairScores, EstimateError> {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        match scorer {
            Scorer::SelfEval => {
                let est = Estimator::new(models[i], sched, cfg, bank)?;
                let caps = [captions[0].clone(), captions[1].clone()];
                let e = est.estimate_many(images[i], &caps)?;
                out[i] = [e[0].log_likelihood, e[1].log_likelihood];
            }
            Scorer::Elbo => {
                for j in 0..2 {
                    out[i][j] = elbo_proxy_score(images[i], captions[j], models[i], sched, cfg)?;
                }
            }
        }
    }
    Ok(out)
}
