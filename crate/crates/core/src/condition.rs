//! Structured conditions and their token embeddings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditionError {
    #[error("count {0} outside 1..={max}", max = MAX_COUNT)]
    Count(u8),
    #[error("scene needs 1..={max} objects, got {0}", max = MAX_OBJECTS)]
    ObjectCount(usize),
    #[error("token order is not a permutation of 0..{SLOTS}")]
    BadOrder,
    #[error("class {id} outside vocabulary of {classes} classes")]
    ClassOutOfRange { id: u32, classes: u32 },
    #[error("condition {0} does not belong to this vocabulary")]
    WrongVocabulary(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Position {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];
    pub fn index(self) -> usize {
        self as usize
    }
    pub fn name(self) -> &'static str {
        ["red", "green", "blue", "yellow"][self as usize]
    }
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];
    pub fn index(self) -> usize {
        self as usize
    }
    pub fn name(self) -> &'static str {
        ["square", "circle", "triangle"][self as usize]
    }
}

impl Position {
    pub const ALL: [Position; 4] =
        [Position::TopLeft, Position::TopRight, Position::BottomLeft, Position::BottomRight];
    pub fn index(self) -> usize {
        self as usize
    }
    pub fn name(self) -> &'static str {
        ["tl", "tr", "bl", "br"][self as usize]
    }
}

pub const MAX_COUNT: u8 = 4;
pub const MAX_OBJECTS: usize = 2;
pub const TOKENS_PER_OBJECT: usize = 4;
pub const SLOTS: usize = MAX_OBJECTS * TOKENS_PER_OBJECT;
/// 4 colors, 3 shapes, 4 counts, 4 positions, padding.
pub const VOCAB: usize = 16;
pub const PAD: u8 = 15;
const SHAPE_BASE: u8 = 4;
const COUNT_BASE: u8 = 7;
const POS_BASE: u8 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectAttrs {
    pub color: Color,
    pub shape: Shape,
    pub count: u8,
    pub position: Position,
}

impl ObjectAttrs {
    pub fn new(color: Color, shape: Shape, count: u8, position: Position) -> Result<Self, ConditionError> {
        if count == 0 || count > MAX_COUNT {
            return Err(ConditionError::Count(count));
        }
        Ok(Self { color, shape, count, position })
    }

    fn tokens(&self) -> [u8; TOKENS_PER_OBJECT] {
        [
            self.color as u8,
            SHAPE_BASE + self.shape as u8,
            COUNT_BASE + self.count - 1,
            POS_BASE + self.position as u8,
        ]
    }

    fn from_tokens(t: &[u8]) -> Option<Self> {
        let color = *Color::ALL.get(usize::from(t[0]))?;
        let shape = *Shape::ALL.get(usize::from(t[1].checked_sub(SHAPE_BASE)?))?;
        let count = t[2].checked_sub(COUNT_BASE)? + 1;
        if count > MAX_COUNT {
            return None;
        }
        let position = *Position::ALL.get(usize::from(t[3].checked_sub(POS_BASE)?))?;
        Some(Self { color, shape, count, position })
    }
}

/// A scene description plus the order in which its token slots are read.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneCondition {
    pub objects: Vec<ObjectAttrs>,
    /// `order[i]` is the canonical slot shown at position `i`.
    pub order: Vec<u8>,
}

pub fn identity_order() -> Vec<u8> {
    (0..SLOTS as u8).collect()
}

impl SceneCondition {
    pub fn new(objects: Vec<ObjectAttrs>) -> Result<Self, ConditionError> {
        Self::with_order(objects, identity_order())
    }

    pub fn with_order(objects: Vec<ObjectAttrs>, order: Vec<u8>) -> Result<Self, ConditionError> {
        if objects.is_empty() || objects.len() > MAX_OBJECTS {
            return Err(ConditionError::ObjectCount(objects.len()));
        }
        if let Some(o) = objects.iter().find(|o| o.count == 0 || o.count > MAX_COUNT) {
            return Err(ConditionError::Count(o.count));
        }
        let mut seen = [false; SLOTS];
        if order.len() != SLOTS {
            return Err(ConditionError::BadOrder);
        }
        for &o in &order {
            let o = usize::from(o);
            if o >= SLOTS || seen[o] {
                return Err(ConditionError::BadOrder);
            }
            seen[o] = true;
        }
        Ok(Self { objects, order })
    }

    pub fn is_canonical_order(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &o)| usize::from(o) == i)
    }

    pub fn canonical_tokens(&self) -> [u8; SLOTS] {
        let mut t = [PAD; SLOTS];
        for (k, o) in self.objects.iter().enumerate() {
            t[k * TOKENS_PER_OBJECT..(k + 1) * TOKENS_PER_OBJECT].copy_from_slice(&o.tokens());
        }
        t
    }

    /// Tokens as presented, after applying the slot order.
    pub fn tokens(&self) -> [u8; SLOTS] {
        let canon = self.canonical_tokens();
        let mut t = [PAD; SLOTS];
        for (i, &o) in self.order.iter().enumerate() {
            t[i] = canon[usize::from(o)];
        }
        t
    }

    /// Reads the presented tokens positionally, dropping slots that do not
    /// form a valid object.
    pub fn read_positionally(&self) -> Vec<ObjectAttrs> {
        let t = self.tokens();
        t.chunks(TOKENS_PER_OBJECT).filter_map(ObjectAttrs::from_tokens).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Condition {
    Scene(SceneCondition),
    /// Abstract class label used by Gaussian oracle worlds.
    Class(u32),
}

impl Condition {
    pub fn scene(objects: Vec<ObjectAttrs>) -> Result<Self, ConditionError> {
        Ok(Condition::Scene(SceneCondition::new(objects)?))
    }

    pub fn as_scene(&self) -> Option<&SceneCondition> {
        match self {
            Condition::Scene(s) => Some(s),
            Condition::Class(_) => None,
        }
    }

    /// Stable textual id, e.g. `red-square-1-tl+blue-circle-1-br@01234567`.
    pub fn id(&self) -> String {
        match self {
            Condition::Class(k) => format!("class:{k}"),
            Condition::Scene(s) => {
                let mut out = s
                    .objects
                    .iter()
                    .map(|o| format!("{}-{}-{}-{}", o.color.name(), o.shape.name(), o.count, o.position.name()))
                    .collect::<Vec<_>>()
                    .join("+");
                if !s.is_canonical_order() {
                    out.push('@');
                    out.extend(s.order.iter().map(|o| char::from(b'0' + o)));
                }
                out
            }
        }
    }
}

/// How conditions are turned into network inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum ConditionVocabulary {
    /// One-hot token per slot.
    #[serde(rename_all = "camelCase")]
    Scene { slots: usize, tokens: usize },
    /// One-hot class label.
    Classes { count: u32 },
}

impl ConditionVocabulary {
    pub fn scene() -> Self {
        ConditionVocabulary::Scene { slots: SLOTS, tokens: VOCAB }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConditionVocabulary::Scene { slots, tokens } => slots * tokens,
            ConditionVocabulary::Classes { count } => *count as usize,
        }
    }

    pub fn embed(&self, c: &Condition) -> Result<Vec<f64>, ConditionError> {
        let mut e = vec![0.0; self.dim()];
        match (self, c) {
            (ConditionVocabulary::Scene { tokens, .. }, Condition::Scene(s)) => {
                for (i, tok) in s.tokens().iter().enumerate() {
                    e[i * tokens + usize::from(*tok)] = 1.0;
                }
            }
            (ConditionVocabulary::Classes { count }, Condition::Class(k)) => {
                if k >= count {
                    return Err(ConditionError::ClassOutOfRange { id: *k, classes: *count });
                }
                e[*k as usize] = 1.0;
            }
            _ => return Err(ConditionError::WrongVocabulary(c.id())),
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(c: Color, s: Shape, n: u8, p: Position) -> ObjectAttrs {
        ObjectAttrs::new(c, s, n, p).unwrap()
    }

    #[test]
    fn embedding_is_one_hot_per_slot() {
        let c = Condition::scene(vec![obj(Color::Blue, Shape::Circle, 3, Position::BottomLeft)]).unwrap();
        let v = ConditionVocabulary::scene();
        let e = v.embed(&c).unwrap();
        assert_eq!(e.len(), 128);
        assert_eq!(e.iter().sum::<f64>(), 8.0);
        assert_eq!(e[2], 1.0);
        assert_eq!(e[16 + 5], 1.0);
        assert_eq!(e[32 + 9], 1.0);
        assert_eq!(e[48 + 13], 1.0);
        assert_eq!(e[64 + 15], 1.0);
    }

    #[test]
    fn order_changes_embedding_not_attributes() {
        let o = obj(Color::Red, Shape::Square, 1, Position::TopLeft);
        let a = SceneCondition::new(vec![o]).unwrap();
        let b = SceneCondition::with_order(vec![o], vec![1, 0, 2, 3, 4, 5, 6, 7]).unwrap();
        let v = ConditionVocabulary::scene();
        assert_ne!(
            v.embed(&Condition::Scene(a.clone())).unwrap(),
            v.embed(&Condition::Scene(b.clone())).unwrap()
        );
        assert_eq!(a.objects, b.objects);
        assert!(b.read_positionally().is_empty());
        assert_eq!(a.read_positionally(), vec![o]);
        assert!(Condition::Scene(b).id().ends_with("@10234567"));
    }

    #[test]
    fn validation() {
        assert!(ObjectAttrs::new(Color::Red, Shape::Square, 0, Position::TopLeft).is_err());
        assert!(ObjectAttrs::new(Color::Red, Shape::Square, 5, Position::TopLeft).is_err());
        let o = obj(Color::Red, Shape::Square, 1, Position::TopLeft);
        assert_eq!(SceneCondition::new(vec![]), Err(ConditionError::ObjectCount(0)));
        assert_eq!(SceneCondition::with_order(vec![o], vec![0; 8]), Err(ConditionError::BadOrder));
        let v = ConditionVocabulary::Classes { count: 2 };
        assert!(v.embed(&Condition::Class(2)).is_err());
        assert!(v.embed(&Condition::scene(vec![o]).unwrap()).is_err());
        assert_eq!(v.embed(&Condition::Class(1)).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn serde_roundtrip() {
        let c = Condition::scene(vec![
            obj(Color::Yellow, Shape::Triangle, 1, Position::TopRight),
            obj(Color::Green, Shape::Square, 1, Position::BottomRight),
        ])
        .unwrap();
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<Condition>(&j).unwrap(), c);
        let v = ConditionVocabulary::scene();
        let j = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<ConditionVocabulary>(&j).unwrap(), v);
    }
}
