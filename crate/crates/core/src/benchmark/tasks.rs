//! Image–text matching tasks: candidate synthesis and suite generation.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_scene, MicroScene};
use super::BenchmarkError;
use crate::condition::{
    identity_order, Color, Condition, ObjectAttrs, Position, SceneCondition, Shape, MAX_COUNT,
    TOKENS_PER_OBJECT,
};
use crate::rng::{lane, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Task {
    AttributeBinding,
    Color,
    Count,
    Shape,
    Spatial,
    TextCorruption,
}

impl Task {
    pub const ALL: [Task; 6] =
        [Task::AttributeBinding, Task::Color, Task::Count, Task::Shape, Task::Spatial, Task::TextCorruption];

    pub fn name(self) -> &'static str {
        match self {
            Task::AttributeBinding => "attributeBinding",
            Task::Color => "color",
            Task::Count => "count",
            Task::Shape => "shape",
            Task::Spatial => "spatial",
            Task::TextCorruption => "textCorruption",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(s))
    }

    pub fn num_candidates(self) -> usize {
        match self {
            Task::AttributeBinding => 2,
            Task::Color | Task::Count | Task::Spatial => 4,
            Task::Shape => 3,
            Task::TextCorruption => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskSpec {
    pub task: Task,
    pub chance_accuracy: f64,
    pub num_candidates: usize,
}

impl TaskSpec {
    pub fn new(task: Task) -> Self {
        let k = task.num_candidates();
        Self { task, chance_accuracy: 1.0 / k as f64, num_candidates: k }
    }

    pub fn chance_pct(&self) -> f64 {
        100.0 * self.chance_accuracy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ItmExample {
    pub id: String,
    pub task: Task,
    /// Seed of the suite this example belongs to; repeats differ only here.
    pub suite_seed: u64,
    pub image: MicroScene,
    pub candidates: Vec<Condition>,
    pub correct_index: usize,
}

pub fn random_object<R: Rng>(rng: &mut R) -> ObjectAttrs {
    ObjectAttrs {
        color: Color::ALL[rng.random_range(0..Color::ALL.len())],
        shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
        count: rng.random_range(1..=MAX_COUNT),
        position: Position::ALL[rng.random_range(0..Position::ALL.len())],
    }
}

/// Two single-instance objects in different quadrants with different colors
/// and shapes.
pub fn random_pair_scene<R: Rng>(rng: &mut R) -> Vec<ObjectAttrs> {
    let p = index::sample(rng, 4, 2);
    let c = index::sample(rng, 4, 2);
    let s = index::sample(rng, 3, 2);
    (0..2)
        .map(|i| ObjectAttrs {
            color: Color::ALL[c.index(i)],
            shape: Shape::ALL[s.index(i)],
            count: 1,
            position: Position::ALL[p.index(i)],
        })
        .collect()
}

/// Share of two-object scenes in training data.
pub const PAIR_SCENE_RATE: f64 = 0.3;

pub fn random_scene<R: Rng>(rng: &mut R) -> Vec<ObjectAttrs> {
    if rng.random_bool(PAIR_SCENE_RATE) {
        random_pair_scene(rng)
    } else {
        vec![random_object(rng)]
    }
}

fn single(c: &Condition) -> Result<ObjectAttrs, BenchmarkError> {
    let s = c.as_scene().ok_or(BenchmarkError::NotAScene)?;
    match s.objects.as_slice() {
        [o] if s.is_canonical_order() => Ok(*o),
        _ => Err(BenchmarkError::Vocabulary("task needs a single-object scene in canonical order".into())),
    }
}

fn one(o: ObjectAttrs) -> Condition {
    Condition::Scene(SceneCondition { objects: vec![o], order: identity_order() })
}

/// Correct condition first, distractors after, before shuffling.
fn candidates_for(task: Task, correct: &Condition, seed: u64) -> Result<Vec<Condition>, BenchmarkError> {
    Ok(match task {
        Task::Color => {
            let o = single(correct)?;
            std::iter::once(o.color)
                .chain(Color::ALL.into_iter().filter(|&c| c != o.color))
                .map(|color| one(ObjectAttrs { color, ..o }))
                .collect()
        }
        Task::Shape => {
            let o = single(correct)?;
            std::iter::once(o.shape)
                .chain(Shape::ALL.into_iter().filter(|&s| s != o.shape))
                .map(|shape| one(ObjectAttrs { shape, ..o }))
                .collect()
        }
        Task::Count => {
            let o = single(correct)?;
            std::iter::once(o.count)
                .chain((1..=MAX_COUNT).filter(|&n| n != o.count))
                .map(|count| one(ObjectAttrs { count, ..o }))
                .collect()
        }
        Task::Spatial => {
            let o = single(correct)?;
            std::iter::once(o.position)
                .chain(Position::ALL.into_iter().filter(|&p| p != o.position))
                .map(|position| one(ObjectAttrs { position, ..o }))
                .collect()
        }
        Task::AttributeBinding => {
            let s = correct.as_scene().ok_or(BenchmarkError::NotAScene)?;
            let [a, b] = s.objects.as_slice() else {
                return Err(BenchmarkError::Vocabulary("binding needs a two-object scene".into()));
            };
            if a.color == b.color {
                return Err(BenchmarkError::Vocabulary("binding needs two distinct colors".into()));
            }
            let swapped = vec![ObjectAttrs { color: b.color, ..*a }, ObjectAttrs { color: a.color, ..*b }];
            vec![correct.clone(), Condition::Scene(SceneCondition { objects: swapped, order: s.order.clone() })]
        }
        Task::TextCorruption => {
            let s = correct.as_scene().ok_or(BenchmarkError::NotAScene)?;
            let want = task.num_candidates();
            let mut rng = StreamKey::new(seed, 0, 1, lane::TASK).rng();
            let mut out = vec![correct.clone()];
            let mut slots: Vec<u8> = (0..TOKENS_PER_OBJECT as u8).collect();
            while out.len() < want {
                slots.shuffle(&mut rng);
                let mut order = s.order.clone();
                for (i, &k) in slots.iter().enumerate() {
                    order[i] = s.order[usize::from(k)];
                }
                let cand = Condition::Scene(SceneCondition { objects: s.objects.clone(), order });
                if !out.contains(&cand) {
                    out.push(cand);
                }
            }
            out
        }
    })
}

pub fn make_itm_example(
    spec: &TaskSpec,
    correct: &Condition,
    seed: u64,
    image_size: usize,
) -> Result<ItmExample, BenchmarkError> {
    let mut cands = candidates_for(spec.task, correct, seed)?;
    if cands.len() != spec.num_candidates {
        return Err(BenchmarkError::Vocabulary(format!(
            "{} needs {} candidates, vocabulary yields {}",
            spec.task.name(),
            spec.num_candidates,
            cands.len()
        )));
    }
    let mut perm: Vec<usize> = (0..cands.len()).collect();
    perm.shuffle(&mut StreamKey::new(seed, 0, 0, lane::TASK).rng());
    let correct_index = perm.iter().position(|&p| p == 0).expect("permutation");
    cands = perm.iter().map(|&p| cands[p].clone()).collect();
    let render_seed = StreamKey::new(seed, 0, 2, lane::TASK).fold();
    Ok(ItmExample {
        id: String::new(),
        task: spec.task,
        suite_seed: seed,
        image: render_scene(correct, render_seed, image_size)?,
        candidates: cands,
        correct_index,
    })
}

/// Seed of example `i` in the suite seeded with `seed`.
pub fn example_seed(task: Task, seed: u64, i: usize) -> u64 {
    StreamKey::new(seed, i as u64, task as u64, lane::TASK).fold()
}

pub fn build_task_suite(
    spec: &TaskSpec,
    size: usize,
    seed: u64,
    image_size: usize,
) -> Result<Vec<ItmExample>, BenchmarkError> {
    if size == 0 {
        return Err(BenchmarkError::Vocabulary("suite size must be at least 1".into()));
    }
    (0..size)
        .map(|i| {
            let es = example_seed(spec.task, seed, i);
            let mut rng = StreamKey::new(es, 0, 3, lane::TASK).rng();
            let objects = match spec.task {
                Task::AttributeBinding => random_pair_scene(&mut rng),
                _ => vec![random_object(&mut rng)],
            };
            let correct = Condition::Scene(SceneCondition { objects, order: identity_order() });
            let mut ex = make_itm_example(spec, &correct, es, image_size)?;
            ex.id = format!("{}-{}-{:05}", spec.task.name(), seed, i);
            ex.suite_seed = seed;
            Ok(ex)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(t: Task) -> TaskSpec {
        TaskSpec::new(t)
    }

    #[test]
    fn chance_levels() {
        let pct: Vec<f64> = Task::ALL.iter().map(|&t| spec(t).chance_pct()).collect();
        let want = [50.0, 25.0, 25.0, 100.0 / 3.0, 25.0, 20.0];
        for (a, b) in pct.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_correct_candidate_and_only_task_attribute_changes() {
        for t in Task::ALL {
            for ex in build_task_suite(&spec(t), 40, 3, 16).unwrap() {
                assert_eq!(ex.candidates.len(), t.num_candidates());
                let truth = &ex.image.condition;
                assert_eq!(&ex.candidates[ex.correct_index], truth);
                assert_eq!(ex.candidates.iter().filter(|c| *c == truth).count(), 1);
                let ts = truth.as_scene().unwrap();
                for c in &ex.candidates {
                    let s = c.as_scene().unwrap();
                    for (a, b) in s.objects.iter().zip(&ts.objects) {
                        match t {
                            Task::Color | Task::AttributeBinding => {
                                assert_eq!((a.shape, a.count, a.position), (b.shape, b.count, b.position))
                            }
                            Task::Shape => assert_eq!((a.color, a.count, a.position), (b.color, b.count, b.position)),
                            Task::Count => assert_eq!((a.color, a.shape, a.position), (b.color, b.shape, b.position)),
                            Task::Spatial => assert_eq!((a.color, a.shape, a.count), (b.color, b.shape, b.count)),
                            Task::TextCorruption => assert_eq!(a, b),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn text_corruption_moves_only_first_object_slots() {
        for ex in build_task_suite(&spec(Task::TextCorruption), 30, 8, 16).unwrap() {
            for c in &ex.candidates {
                let s = c.as_scene().unwrap();
                assert!(s.order[4..].iter().enumerate().all(|(i, &o)| usize::from(o) == i + 4));
            }
        }
    }

    #[test]
    fn errors() {
        let pair = Condition::scene(random_pair_scene(&mut StreamKey::new(1, 0, 0, 0).rng())).unwrap();
        assert!(make_itm_example(&spec(Task::Color), &pair, 0, 16).is_err());
        let o = random_object(&mut StreamKey::new(1, 0, 0, 0).rng());
        assert!(make_itm_example(&spec(Task::AttributeBinding), &one(o), 0, 16).is_err());
        assert!(build_task_suite(&spec(Task::Color), 0, 0, 16).is_err());
    }

    #[test]
    fn label_balance() {
        // χ² with 3 degrees of freedom; 11.34 is the 0.01 critical value.
        let ex = build_task_suite(&spec(Task::Color), 5000, 11, 16).unwrap();
        let mut color = [0.0f64; 4];
        let mut idx = [0.0f64; 4];
        for e in &ex {
            color[e.image.condition.as_scene().unwrap().objects[0].color.index()] += 1.0;
            idx[e.correct_index] += 1.0;
        }
        for h in [color, idx] {
            let chi: f64 = h.iter().map(|o| (o - 1250.0).powi(2) / 1250.0).sum();
            assert!(chi < 11.34, "chi2 {chi}");
        }
    }
}
