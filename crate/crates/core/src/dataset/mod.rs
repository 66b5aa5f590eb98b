//! Corpus model: frames, key objects, QA pairs and the tag grammar.

mod classify;
mod corpus;
pub mod tag;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use classify::{classify_question, classify_text};
pub use corpus::{load_corpus, load_corpus_with, parse_corpus, CorpusStats, LoadError, LoadOptions};
pub use tag::{
    extract_tags, find_tags, parse_keyobj_tag, Camera, KeyObjectTag, ObjectId, TagErrorKind,
    TagParseError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Perception,
    Prediction,
    Planning,
    Behavior,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Perception,
        Category::Prediction,
        Category::Planning,
        Category::Behavior,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Perception => "perception",
            Category::Prediction => "prediction",
            Category::Planning => "planning",
            Category::Behavior => "behavior",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown QA category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    MultipleChoice,
    YesNo,
    Open,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 3] = [
        QuestionKind::MultipleChoice,
        QuestionKind::YesNo,
        QuestionKind::Open,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionKind::MultipleChoice => "multiple_choice",
            QuestionKind::YesNo => "yes_no",
            QuestionKind::Open => "open",
        }
    }

    /// Closed-form kinds are scored by accuracy and fused by vote.
    pub fn is_closed(self) -> bool {
        !matches!(self, QuestionKind::Open)
    }
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

/// Axis-aligned box in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> BBox {
        BBox {
            x_min: self.x_min * sx,
            y_min: self.y_min * sy,
            x_max: self.x_max * sx,
            y_max: self.y_max * sy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyObjectInfo {
    pub tag: KeyObjectTag,
    pub category: String,
    pub status: Option<String>,
    pub visual_description: String,
    /// Absent in question-only splits.
    pub bbox: Option<BBox>,
    #[serde(skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub question_id: String,
    pub category: Category,
    pub kind: QuestionKind,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Set for QAs generated from key-object metadata.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_object_id: Option<ObjectId>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub scene_id: String,
    pub frame_id: String,
    pub image_paths: BTreeMap<Camera, String>,
    pub key_objects: BTreeMap<ObjectId, KeyObjectInfo>,
    pub qas: Vec<QaPair>,
    pub extra: Map<String, Value>,
}

impl Frame {
    pub fn image_path(&self, camera: Camera) -> Option<&str> {
        self.image_paths
            .get(&camera)
            .map(String::as_str)
            .filter(|p| !p.is_empty())
    }

    pub fn key_object(&self, id: &ObjectId) -> Option<&KeyObjectInfo> {
        self.key_objects.get(id)
    }
}

/// A tag quoted by a question that has no key-object entry in its frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnresolvedTag {
    pub question_id: String,
    pub tag: KeyObjectTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub split: Split,
    pub frames: Vec<Frame>,
    pub unresolved: Vec<UnresolvedTag>,
    /// Data-quality flags that did not block loading.
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn question_count(&self) -> usize {
        self.frames.iter().map(|f| f.qas.len()).sum()
    }

    pub fn questions(&self) -> impl Iterator<Item = (&Frame, &QaPair)> {
        self.frames
            .iter()
            .flat_map(|f| f.qas.iter().map(move |q| (f, q)))
    }

    pub fn find_frame(&self, frame_id: &str) -> Option<&Frame> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    /// Reference answers keyed by question id.
    pub fn references(&self) -> BTreeMap<String, String> {
        self.questions()
            .filter_map(|(_, q)| q.answer.clone().map(|a| (q.question_id.clone(), a)))
            .collect()
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats::of(self)
    }
}
