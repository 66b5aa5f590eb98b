//! Image selection and prompt assembly.
//!
//! Every prompt has the shape
//! `USER: <image> {desc&state} {depth} {cot} {question} ASSISTANT:` with
//! empty parts elided.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::PathBuf;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::augment::describe_object;
use crate::dataset::{extract_tags, Camera, Corpus, Frame, KeyObjectTag, ObjectId, QaPair};
use crate::depth::DepthIndex;
use crate::par;

pub const PROMPT_HEAD: &str = "USER: <image>";
pub const PROMPT_TAIL: &str = "ASSISTANT:";
pub const DEFAULT_ZERO_SHOT_CUE: &str = "Let's think step by step.";

static DIRECTION: LazyLock<Regex> = LazyLock::new(|| {
    // longer phrases first so "front left" wins over "front" at the same position
    Regex::new(
        r"(?i)\b(front[\s_-]+left|front[\s_-]+right|back[\s_-]+left|back[\s_-]+right|front|back|behind|rear)\b",
    )
    .unwrap()
});

/// Camera named by a directional phrase in the question, if any.
pub fn detect_direction(question: &str) -> Option<Camera> {
    let m = DIRECTION.find(question)?;
    let words: Vec<String> = m
        .as_str()
        .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let camera = match words.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["front", "left"] => Camera::FrontLeft,
        ["front", "right"] => Camera::FrontRight,
        ["back", "left"] => Camera::BackLeft,
        ["back", "right"] => Camera::BackRight,
        ["front"] => Camera::Front,
        _ => Camera::Back,
    };
    Some(camera)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Camera of the first tag quoted by the question.
    Tagged,
    /// Camera named by a direction phrase.
    Direction,
    /// Front camera fallback.
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageSelection {
    pub camera: Camera,
    pub rule: SelectionRule,
}

/// Precedence: tags, then direction, then the front camera.
pub fn select_image(tags: &[KeyObjectTag], direction: Option<Camera>, frame: &Frame) -> ImageSelection {
    if let Some(first) = tags.first() {
        if tags.iter().any(|t| t.camera != first.camera) {
            log::debug!(
                "{}: question tags span several cameras, using {}",
                frame.frame_id,
                first.camera
            );
        }
        return ImageSelection {
            camera: first.camera,
            rule: SelectionRule::Tagged,
        };
    }
    match direction {
        Some(camera) => ImageSelection {
            camera,
            rule: SelectionRule::Direction,
        },
        None => ImageSelection {
            camera: Camera::Front,
            rule: SelectionRule::Default,
        },
    }
}

/// Key objects whose descriptions go into the prompt, in prompt order.
///
/// Tagged questions use their resolved tags in question order; direction
/// questions use every object seen by the selected camera; otherwise all
/// objects of the frame. Returns `(objects, unresolved tags)`.
pub fn prompt_objects(
    frame: &Frame,
    selection: ImageSelection,
    tags: &[KeyObjectTag],
) -> (Vec<ObjectId>, Vec<KeyObjectTag>) {
    match selection.rule {
        SelectionRule::Tagged => {
            let mut seen = HashSet::new();
            let mut objects = Vec::new();
            let mut unresolved = Vec::new();
            for tag in tags {
                if frame.key_objects.contains_key(&tag.object_id) {
                    if seen.insert(tag.object_id.clone()) {
                        objects.push(tag.object_id.clone());
                    }
                } else {
                    unresolved.push(tag.clone());
                }
            }
            (objects, unresolved)
        }
        SelectionRule::Direction => (
            frame
                .key_objects
                .iter()
                .filter(|(_, o)| o.tag.camera == selection.camera)
                .map(|(id, _)| id.clone())
                .collect(),
            vec![],
        ),
        SelectionRule::Default => (frame.key_objects.keys().cloned().collect(), vec![]),
    }
}

/// Concatenated description sentences for `objects`; objects missing from
/// `desc_source` are skipped.
pub fn gather_desc_state(objects: &[ObjectId], desc_source: &BTreeMap<ObjectId, String>) -> String {
    objects
        .iter()
        .filter_map(|id| {
            let d = desc_source.get(id).map(|s| s.trim()).filter(|s| !s.is_empty());
            if d.is_none() {
                log::debug!("no description for {id}");
            }
            d
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn depth_sentence(tag: &KeyObjectTag, label: &str) -> String {
    format!("{tag} is {label} to the ego vehicle.")
}

/// One depth sentence per object with an index entry.
pub fn depth_text(frame: &Frame, objects: &[ObjectId], depth: &DepthIndex) -> String {
    objects
        .iter()
        .filter_map(|id| {
            let obj = frame.key_objects.get(id)?;
            let rec = depth.get(&frame.frame_id, id)?;
            Some(depth_sentence(&obj.tag, &rec.label))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotMode {
    #[default]
    None,
    ZeroShot,
    FewShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub cot_mode: CotMode,
    pub zero_shot_cue: String,
    /// Text file holding few-shot exemplars, used verbatim.
    pub few_shot_file: Option<PathBuf>,
    /// Contents of `few_shot_file`, filled in when the config is loaded.
    #[serde(skip)]
    pub few_shot_text: Option<String>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            cot_mode: CotMode::None,
            zero_shot_cue: DEFAULT_ZERO_SHOT_CUE.to_string(),
            few_shot_file: None,
            few_shot_text: None,
        }
    }
}

impl PromptConfig {
    /// The text inserted before the question for the configured mode.
    pub fn cot_prefix(&self) -> Option<&str> {
        match self.cot_mode {
            CotMode::None => None,
            CotMode::ZeroShot => Some(self.zero_shot_cue.as_str()),
            CotMode::FewShot => self.few_shot_text.as_deref(),
        }
    }
}

/// Joins the non-empty parts with single spaces inside the fixed frame.
pub fn compose_prompt(desc_state: &str, depth_text: &str, question: &str, cot_prefix: Option<&str>) -> String {
    let mut parts = vec![PROMPT_HEAD];
    parts.extend(
        [desc_state, depth_text, cot_prefix.unwrap_or(""), question]
            .into_iter()
            .map(str::trim)
            .filter(|p| !p.is_empty()),
    );
    parts.push(PROMPT_TAIL);
    parts.join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptParts {
    pub desc_state: String,
    pub depth_text: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot_prefix: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub question_id: String,
    pub camera: Camera,
    pub image_path: String,
    pub prompt_text: String,
    pub parts: PromptParts,
}

/// Everything about a question's prompt that does not need descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPlan {
    pub tags: Vec<KeyObjectTag>,
    pub selection: ImageSelection,
    pub objects: Vec<ObjectId>,
    pub unresolved: Vec<KeyObjectTag>,
}

pub fn plan_prompt(frame: &Frame, qa: &QaPair) -> PromptPlan {
    let tags = extract_tags(&qa.question);
    let selection = select_image(&tags, detect_direction(&qa.question), frame);
    let (objects, unresolved) = prompt_objects(frame, selection, &tags);
    PromptPlan {
        tags,
        selection,
        objects,
        unresolved,
    }
}

/// Builds the bundle; `None` when the frame has no image for the selected camera.
pub fn build_bundle(
    frame: &Frame,
    qa: &QaPair,
    plan: &PromptPlan,
    desc_source: &BTreeMap<ObjectId, String>,
    depth: &DepthIndex,
    cot_prefix: Option<&str>,
) -> Option<PromptBundle> {
    let image_path = frame.image_path(plan.selection.camera)?.to_string();
    let desc_state = gather_desc_state(&plan.objects, desc_source);
    let depth_text = depth_text(frame, &plan.objects, depth);
    let prompt_text = compose_prompt(&desc_state, &depth_text, &qa.question, cot_prefix);
    Some(PromptBundle {
        question_id: qa.question_id.clone(),
        camera: plan.selection.camera,
        image_path,
        prompt_text,
        parts: PromptParts {
            desc_state,
            depth_text,
            question: qa.question.clone(),
            cot_prefix: cot_prefix.map(String::from),
        },
    })
}

/// Description sentences taken from the corpus metadata.
pub fn metadata_descriptions(frame: &Frame) -> BTreeMap<ObjectId, String> {
    frame
        .key_objects
        .iter()
        .filter_map(|(id, o)| describe_object(o).map(|d| (id.clone(), d)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub question_id: String,
    pub image_path: String,
    pub prompt_text: String,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExportReport {
    pub written: usize,
    pub skipped: Vec<(String, String)>,
}

/// Training records for every QA, in corpus order, without any CoT text.
pub fn training_records(corpus: &Corpus, depth: &DepthIndex) -> (Vec<TrainingRecord>, ExportReport) {
    let per_frame = par::map(&corpus.frames, |frame| {
        let descs = metadata_descriptions(frame);
        frame
            .qas
            .iter()
            .map(|qa| {
                let Some(target) = qa.answer.clone() else {
                    return Err((qa.question_id.clone(), "no reference answer".to_string()));
                };
                let plan = plan_prompt(frame, qa);
                match build_bundle(frame, qa, &plan, &descs, depth, None) {
                    Some(b) => Ok(TrainingRecord {
                        question_id: b.question_id,
                        image_path: b.image_path,
                        prompt_text: b.prompt_text,
                        target,
                    }),
                    None => Err((
                        qa.question_id.clone(),
                        format!("missing image path for {}", plan.selection.camera),
                    )),
                }
            })
            .collect::<Vec<_>>()
    });
    let mut records = Vec::new();
    let mut report = ExportReport::default();
    for r in per_frame.into_iter().flatten() {
        match r {
            Ok(rec) => records.push(rec),
            Err(skip) => report.skipped.push(skip),
        }
    }
    report.written = records.len();
    (records, report)
}

/// Writes training records as JSON Lines.
pub fn export_training_records(
    corpus: &Corpus,
    depth: &DepthIndex,
    mut out: impl Write,
) -> std::io::Result<ExportReport> {
    let (records, report) = training_records(corpus, depth);
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(report)
}
