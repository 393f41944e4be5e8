//! Swap pairs, oracle models and the two-world scale fixture.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_mean, render_scene, MicroScene};
use super::tasks::{random_pair_scene, random_scene};
use super::BenchmarkError;
use crate::condition::{identity_order, Condition, ObjectAttrs, SceneCondition};
use crate::denoiser::{AnalyticDenoiser, ConditionBlind, ConditionedSample, GaussianClassModel};
use crate::rng::{lane, normal_vec, StreamKey};

/// Class variance of the render-mean oracle in data space.
pub const ORACLE_CLASS_VAR: f64 = 0.05;

/// Analytic denoiser whose class means are the expected renders of `conds`.
/// Token sequences are read positionally, so garbled orders map to whatever
/// valid objects remain.
pub fn oracle_model(conds: &[Condition], size: usize, class_var: f64) -> Result<AnalyticDenoiser, BenchmarkError> {
    let dim = size * size * super::render::CHANNELS;
    let mut gm = GaussianClassModel::new(dim, class_var)
        .map_err(|e| BenchmarkError::Vocabulary(e.to_string()))?;
    for c in conds {
        let s = c.as_scene().ok_or(BenchmarkError::NotAScene)?;
        gm.insert(c, render_mean(&s.read_positionally(), size))
            .map_err(|e| BenchmarkError::Vocabulary(e.to_string()))?;
    }
    Ok(AnalyticDenoiser::new(gm))
}

/// Oracle that ignores its condition: every candidate maps to the background.
pub fn pooled_blind_model(size: usize) -> ConditionBlind<AnalyticDenoiser> {
    let pooled = Condition::Class(0);
    let dim = size * size * super::render::CHANNELS;
    let gm = GaussianClassModel::new(dim, ORACLE_CLASS_VAR)
        .and_then(|g| g.with_class(&pooled, render_mean(&[], size)))
        .expect("background mean has the right size");
    ConditionBlind::new(AnalyticDenoiser::new(gm), pooled)
}

/// Rendered training scenes, 30% of them two-object scenes.
pub fn training_scenes(size: usize, seed: u64, image_size: usize) -> Result<Vec<MicroScene>, BenchmarkError> {
    (0..size)
        .map(|i| {
            let mut rng = StreamKey::new(seed, i as u64, 0, lane::TASK).rng();
            let c = Condition::Scene(SceneCondition { objects: random_scene(&mut rng), order: identity_order() });
            render_scene(&c, StreamKey::new(seed, i as u64, 1, lane::TASK).fold(), image_size)
        })
        .collect()
}

pub fn training_set(size: usize, seed: u64, image_size: usize) -> Result<Vec<ConditionedSample>, BenchmarkError> {
    Ok(training_scenes(size, seed, image_size)?.into_iter().map(to_sample).collect())
}

pub fn to_sample(s: MicroScene) -> ConditionedSample {
    ConditionedSample { x0: s.data(), condition: s.condition }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SwapKind {
    Color,
    Shape,
    Position,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapPair {
    pub id: String,
    pub kind: SwapKind,
    pub a: MicroScene,
    pub b: MicroScene,
}

fn swap(objs: &[ObjectAttrs], kind: SwapKind) -> Vec<ObjectAttrs> {
    let (a, b) = (objs[0], objs[1]);
    match kind {
        SwapKind::Color => vec![ObjectAttrs { color: b.color, ..a }, ObjectAttrs { color: a.color, ..b }],
        SwapKind::Shape => vec![ObjectAttrs { shape: b.shape, ..a }, ObjectAttrs { shape: a.shape, ..b }],
        SwapKind::Position => {
            vec![ObjectAttrs { position: b.position, ..a }, ObjectAttrs { position: a.position, ..b }]
        }
    }
}

/// Two-object scenes whose captions swap one attribute type between objects.
pub fn build_winoground_pairs(size: usize, seed: u64, image_size: usize) -> Result<Vec<SwapPair>, BenchmarkError> {
    if size == 0 {
        return Err(BenchmarkError::Vocabulary("pair count must be at least 1".into()));
    }
    (0..size)
        .map(|i| {
            let mut rng = StreamKey::new(seed, i as u64, 0, lane::PAIRS).rng();
            let objs = random_pair_scene(&mut rng);
            let kind = [SwapKind::Color, SwapKind::Shape, SwapKind::Position][rng.random_range(0..3)];
            let ca = Condition::Scene(SceneCondition { objects: objs.clone(), order: identity_order() });
            let cb = Condition::Scene(SceneCondition { objects: swap(&objs, kind), order: identity_order() });
            Ok(SwapPair {
                id: format!("pair-{seed}-{i:05}"),
                kind,
                a: render_scene(&ca, StreamKey::new(seed, i as u64, 1, lane::PAIRS).fold(), image_size)?,
                b: render_scene(&cb, StreamKey::new(seed, i as u64, 2, lane::PAIRS).fold(), image_size)?,
            })
        })
        .collect()
}

/// One pair of the scale fixture. Caption a is `Class(0)`, caption b is
/// `Class(1)`; `world1` scores image a and `world3` scores image b.
#[derive(Debug, Clone)]
pub struct ScalePair {
    pub x_a: Vec<f64>,
    pub x_b: Vec<f64>,
    pub world1: AnalyticDenoiser,
    pub world3: AnalyticDenoiser,
}

#[derive(Debug, Clone)]
pub struct ScaleMismatchFixture {
    pub dim: usize,
    pub class_var: f64,
    pub pairs: Vec<ScalePair>,
}

impl ScaleMismatchFixture {
    pub fn captions() -> [Condition; 2] {
        [Condition::Class(0), Condition::Class(1)]
    }
}

/// Two Gaussian worlds related by a factor-3 scaling. In world 1 class c is
/// N(m_c, s²I); world 3 is N(3m_c, 9s²I). Image a comes from class 0 of world
/// 1, image b from class 1 of world 3, and ‖m_1 − m_0‖² = 3.5·D·s².
pub fn scale_mismatch_fixture(pairs: usize, seed: u64) -> ScaleMismatchFixture {
    const DIM: usize = 64;
    const S2: f64 = 1e-3;
    let [c0, c1] = ScaleMismatchFixture::captions();
    let pairs = (0..pairs)
        .map(|i| {
            let key = |step| StreamKey::new(seed, i as u64, step, lane::FIXTURE);
            let m0: Vec<f64> = normal_vec(key(0), DIM).iter().map(|v| 0.5 * v).collect();
            let dir = normal_vec(key(1), DIM);
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let gap = (3.5 * DIM as f64 * S2).sqrt();
            let m1: Vec<f64> = m0.iter().zip(&dir).map(|(m, d)| m + gap * d / norm).collect();
            let x_a: Vec<f64> = m0.iter().zip(normal_vec(key(2), DIM)).map(|(m, z)| m + S2.sqrt() * z).collect();
            let x_b: Vec<f64> =
                m1.iter().zip(normal_vec(key(3), DIM)).map(|(m, z)| 3.0 * (m + S2.sqrt() * z)).collect();
            let world = |scale: f64| {
                let gm = GaussianClassModel::new(DIM, scale * scale * S2)
                    .and_then(|g| g.with_class(&c0, m0.iter().map(|v| scale * v).collect()))
                    .and_then(|g| g.with_class(&c1, m1.iter().map(|v| scale * v).collect()))
                    .expect("fixture dimensions agree");
                AnalyticDenoiser::new(gm)
            };
            ScalePair { x_a, x_b, world1: world(1.0), world3: world(3.0) }
        })
        .collect();
    ScaleMismatchFixture { dim: DIM, class_var: S2, pairs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_differ() {
        for p in build_winoground_pairs(50, 1, 16).unwrap() {
            assert_ne!(p.a.condition, p.b.condition);
            assert_ne!(p.a.image, p.b.image);
            let (a, b) = (p.a.condition.as_scene().unwrap(), p.b.condition.as_scene().unwrap());
            let diff = |f: fn(&ObjectAttrs) -> u8| a.objects.iter().zip(&b.objects).any(|(x, y)| f(x) != f(y));
            let changed = [
                diff(|o| o.color as u8),
                diff(|o| o.shape as u8),
                diff(|o| o.position as u8),
            ];
            assert_eq!(changed.iter().filter(|c| **c).count(), 1);
        }
    }

    #[test]
    fn oracle_means_follow_positional_reading() {
        let pairs = build_winoground_pairs(1, 0, 16).unwrap();
        let c = &pairs[0].a.condition;
        let m = oracle_model(std::slice::from_ref(c), 16, ORACLE_CLASS_VAR).unwrap();
        assert_eq!(
            m.model.mean(c).unwrap(),
            render_mean(&c.as_scene().unwrap().objects, 16).as_slice()
        );
    }

    #[test]
    fn scale_fixture_geometry() {
        let f = scale_mismatch_fixture(3, 7);
        let [c0, c1] = ScaleMismatchFixture::captions();
        for p in &f.pairs {
            let m0 = p.world1.model.mean(&c0).unwrap();
            let m1 = p.world1.model.mean(&c1).unwrap();
            let d2: f64 = m0.iter().zip(m1).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!((d2 - 3.5 * 64.0 * 1e-3).abs() < 1e-12);
            assert!((p.world3.model.class_var - 9e-3).abs() < 1e-15);
            assert!((p.world3.model.mean(&c1).unwrap()[0] - 3.0 * m1[0]).abs() < 1e-12);
        }
    }
}
