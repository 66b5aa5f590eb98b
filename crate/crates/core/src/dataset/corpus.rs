//! Loading the DriveLM-style JSON layout:
//!
//! ```text
//! { scene_id: { "key_frames": { frame_id: {
//!     "key_object_infos": { "<c1,CAM_BACK,1088.3,497.5>": {Category, Status, Visual_description, 2d_bbox} },
//!     "QA": { "perception": [{"Q": .., "A": ..}], "prediction": [..], "planning": [..], "behavior": [..] },
//!     "image_paths": { "CAM_FRONT": "..", ... } } } } }
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::tag::{IMAGE_HEIGHT, IMAGE_WIDTH};
use super::{
    classify_text, extract_tags, parse_keyobj_tag, BBox, Camera, Category, Corpus, Frame,
    KeyObjectInfo, QaPair, QuestionKind, Split, UnresolvedTag,
};
use crate::par;

/// Maximum distance between a bbox center and its tag center before a
/// warning is recorded.
const CENTER_TOLERANCE_PX: f64 = 1.0;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scene {scene}: {message}")]
    Scene { scene: String, message: String },
    #[error("scene {scene}, frame {frame}: {message}")]
    Frame {
        scene: String,
        frame: String,
        message: String,
    },
    #[error("duplicate frame id {0}")]
    DuplicateFrame(String),
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Forces the kind of specific questions, by question id.
    pub kind_overrides: HashMap<String, QuestionKind>,
}

#[derive(Deserialize)]
struct RawScene {
    key_frames: IndexMap<String, Value>,
}

#[derive(Deserialize)]
struct RawFrame {
    #[serde(default)]
    key_object_infos: IndexMap<String, RawKeyObject>,
    #[serde(rename = "QA")]
    qa: IndexMap<String, Vec<RawQa>>,
    image_paths: IndexMap<String, String>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Deserialize)]
struct RawKeyObject {
    #[serde(rename = "Category", default)]
    category: Option<String>,
    #[serde(rename = "Status", default)]
    status: Option<String>,
    #[serde(rename = "Visual_description", default)]
    visual_description: Option<String>,
    #[serde(rename = "2d_bbox", default)]
    bbox: Option<Vec<f64>>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Deserialize)]
struct RawQa {
    #[serde(rename = "Q")]
    q: String,
    #[serde(rename = "A", default)]
    a: Option<String>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

pub fn load_corpus(path: impl AsRef<Path>, split: Split) -> Result<Corpus, LoadError> {
    load_corpus_with(path, split, &LoadOptions::default())
}

pub fn load_corpus_with(
    path: impl AsRef<Path>,
    split: Split,
    options: &LoadOptions,
) -> Result<Corpus, LoadError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&bytes, split, options)
}

struct LoadedFrame {
    frame: Frame,
    unresolved: Vec<UnresolvedTag>,
    warnings: Vec<String>,
}

pub fn parse_corpus(bytes: &[u8], split: Split, options: &LoadOptions) -> Result<Corpus, LoadError> {
    let scenes: IndexMap<String, Value> = serde_json::from_slice(bytes)?;
    let scenes: Vec<(String, Value)> = scenes.into_iter().collect();

    let per_scene = par::try_map(&scenes, |(scene_id, value)| {
        load_scene(scene_id, value, options)
    })?;

    let mut frames = Vec::new();
    let mut unresolved = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for loaded in per_scene.into_iter().flatten() {
        if !seen.insert(loaded.frame.frame_id.clone()) {
            return Err(LoadError::DuplicateFrame(loaded.frame.frame_id));
        }
        frames.push(loaded.frame);
        unresolved.extend(loaded.unresolved);
        warnings.extend(loaded.warnings);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Corpus {
        split,
        frames,
        unresolved,
        warnings,
    })
}

fn load_scene(
    scene_id: &str,
    value: &Value,
    options: &LoadOptions,
) -> Result<Vec<LoadedFrame>, LoadError> {
    let raw = RawScene::deserialize(value).map_err(|e| LoadError::Scene {
        scene: scene_id.to_string(),
        message: e.to_string(),
    })?;
    raw.key_frames
        .iter()
        .map(|(frame_id, v)| {
            let err = |message: String| LoadError::Frame {
                scene: scene_id.to_string(),
                frame: frame_id.clone(),
                message,
            };
            let raw = RawFrame::deserialize(v).map_err(|e| err(e.to_string()))?;
            build_frame(scene_id, frame_id, raw, options).map_err(err)
        })
        .collect()
}

fn build_frame(
    scene_id: &str,
    frame_id: &str,
    raw: RawFrame,
    options: &LoadOptions,
) -> Result<LoadedFrame, String> {
    let mut warnings = Vec::new();

    let mut image_paths = BTreeMap::new();
    for (name, path) in raw.image_paths {
        let camera: Camera = name.parse().map_err(|e| format!("image_paths: {e}"))?;
        image_paths.insert(camera, path);
    }
    if let Some(missing) = Camera::ALL.iter().find(|c| !image_paths.contains_key(c)) {
        return Err(format!("missing image path for {missing}"));
    }

    let mut key_objects = BTreeMap::new();
    for (key, obj) in raw.key_object_infos {
        let tag = parse_keyobj_tag(&key).map_err(|e| format!("key object `{key}`: {e}"))?;
        let bbox = match obj.bbox.as_deref() {
            None => None,
            Some(&[x_min, y_min, x_max, y_max]) => {
                if !(x_min < x_max && y_min < y_max) {
                    return Err(format!("key object `{key}`: degenerate 2d_bbox"));
                }
                Some(BBox {
                    x_min,
                    y_min,
                    x_max,
                    y_max,
                })
            }
            Some(other) => {
                return Err(format!(
                    "key object `{key}`: 2d_bbox has {} values, expected 4",
                    other.len()
                ))
            }
        };
        if let Some(b) = bbox {
            let at = format!("{scene_id}/{frame_id} {key}");
            if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > IMAGE_WIDTH || b.y_max > IMAGE_HEIGHT {
                warnings.push(format!("{at}: bbox extends outside the image"));
            }
            let (cx, cy) = b.center();
            if (cx - tag.center_x).hypot(cy - tag.center_y) > CENTER_TOLERANCE_PX {
                warnings.push(format!(
                    "{at}: bbox center ({cx:.1},{cy:.1}) differs from tag center"
                ));
            }
        }
        let id = tag.object_id.clone();
        let info = KeyObjectInfo {
            tag,
            category: obj.category.unwrap_or_default(),
            status: obj.status.filter(|s| !s.trim().is_empty()),
            visual_description: obj.visual_description.unwrap_or_default(),
            bbox,
            extra: obj.extra,
        };
        if key_objects.insert(id.clone(), info).is_some() {
            return Err(format!("duplicate key object id {id}"));
        }
    }

    let mut qas = Vec::new();
    let mut unresolved = Vec::new();
    for (name, list) in raw.qa {
        let category: Category = name.parse()?;
        for (index, qa) in list.into_iter().enumerate() {
            let question_id = format!("{scene_id}/{frame_id}/{category}/{index}");
            let kind = options
                .kind_overrides
                .get(&question_id)
                .copied()
                .unwrap_or_else(|| classify_text(&qa.q, qa.a.as_deref()));
            for tag in extract_tags(&qa.q) {
                if !key_objects.contains_key(&tag.object_id) {
                    unresolved.push(UnresolvedTag {
                        question_id: question_id.clone(),
                        tag,
                    });
                }
            }
            qas.push(QaPair {
                question_id,
                category,
                kind,
                question: qa.q,
                answer: qa.a,
                source_object_id: None,
                extra: qa.extra,
            });
        }
    }

    Ok(LoadedFrame {
        frame: Frame {
            scene_id: scene_id.to_string(),
            frame_id: frame_id.to_string(),
            image_paths,
            key_objects,
            qas,
            extra: raw.extra,
        },
        unresolved,
        warnings,
    })
}

/// Counts reported by `ingest`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub split: Split,
    pub scenes: usize,
    pub frames: usize,
    pub questions: usize,
    pub key_objects: usize,
    pub per_category: BTreeMap<Category, usize>,
    pub per_kind: BTreeMap<QuestionKind, usize>,
    pub unresolved: Vec<UnresolvedTag>,
    pub warnings: usize,
}

impl CorpusStats {
    pub fn of(corpus: &Corpus) -> Self {
        let mut per_category: BTreeMap<Category, usize> =
            Category::ALL.iter().map(|c| (*c, 0)).collect();
        let mut per_kind: BTreeMap<QuestionKind, usize> =
            QuestionKind::ALL.iter().map(|k| (*k, 0)).collect();
        for (_, qa) in corpus.questions() {
            *per_category.entry(qa.category).or_default() += 1;
            *per_kind.entry(qa.kind).or_default() += 1;
        }
        let scenes: HashSet<&str> = corpus.frames.iter().map(|f| f.scene_id.as_str()).collect();
        CorpusStats {
            split: corpus.split,
            scenes: scenes.len(),
            frames: corpus.frames.len(),
            questions: corpus.question_count(),
            key_objects: corpus.frames.iter().map(|f| f.key_objects.len()).sum(),
            per_category,
            per_kind,
            unresolved: corpus.unresolved.clone(),
            warnings: corpus.warnings.len(),
        }
    }
}
