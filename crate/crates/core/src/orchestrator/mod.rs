//! Two-stage inference against a VLM backend.
//!
//! Stage 1 asks the backend to describe each key object a prompt needs
//! (cached per frame, object and system). Stage 2 sends the composed prompt
//! with those descriptions and the depth sentences, and records the answer.
//! Questions run on a fixed pool of workers so at most `concurrency`
//! requests are in flight; answers are appended to the predictions file as
//! they complete and the file is rewritten sorted by question id at the end.

mod backend;
pub mod predictions;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    final_question_sentence, generate_with_retry, request_digest, Backend, BackendError,
    BackendRequest, BackendResponse, HttpBackend, ImageTransport, MockEchoBackend, RetryPolicy,
};
pub use predictions::{load_run, read_predictions, write_predictions, PredictionRecord, PredictionsError};

use crate::augment::keyobj_question;
use crate::dataset::{Corpus, Frame, KeyObjectTag, ObjectId, QaPair, QuestionKind};
use crate::depth::DepthIndex;
use crate::prompting::{build_bundle, compose_prompt, plan_prompt, PromptBundle, PromptConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub question_id: String,
    pub system_id: String,
    pub scene_id: String,
    pub frame_id: String,
    pub kind: QuestionKind,
    pub text: String,
    pub stage1_desc_state: Option<String>,
    pub latency_ms: u64,
    /// Set when the backend could not produce an answer.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRun {
    pub system_id: String,
    pub answers: BTreeMap<String, Answer>,
    pub config_snapshot: serde_json::Value,
}

impl SystemRun {
    pub fn records(&self) -> Vec<PredictionRecord> {
        self.answers.values().map(PredictionRecord::from).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub system_id: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    /// Maximum number of backend requests in flight.
    pub concurrency: usize,
    pub retry: RetryPolicy,
    /// Failed fraction of questions above which the run counts as failed.
    pub max_error_fraction: f64,
    /// Query the backend for key-object descriptions before answering.
    pub stage1: bool,
    pub prompt: PromptConfig,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            system_id: "system".into(),
            max_new_tokens: 512,
            temperature: 0.0,
            concurrency: 4,
            retry: RetryPolicy::default(),
            max_error_fraction: 0.05,
            stage1: true,
            prompt: PromptConfig::default(),
        }
    }
}

type CacheKey = (String, ObjectId, String);

/// Stage-1 descriptions shared by all questions of a run. Each key is
/// computed at most once even under concurrent lookups.
#[derive(Default)]
pub struct Stage1Cache {
    slots: Mutex<HashMap<CacheKey, Arc<OnceLock<Option<String>>>>>,
    calls: AtomicUsize,
}

impl Stage1Cache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of stage-1 backend calls issued (retries excluded).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn get_or_compute(&self, key: CacheKey, compute: impl FnOnce() -> Option<String>) -> Option<String> {
        let slot = {
            let mut slots = self.slots.lock().unwrap();
            slots.entry(key).or_default().clone()
        };
        slot.get_or_init(|| {
            self.calls.fetch_add(1, Ordering::SeqCst);
            compute()
        })
        .clone()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Descriptions {
    pub by_object: BTreeMap<ObjectId, String>,
    pub unavailable: Vec<ObjectId>,
}

fn request(config: &InferenceConfig, prompt: String, image_path: &str) -> BackendRequest {
    BackendRequest {
        prompt,
        image_path: Some(image_path.to_string()),
        image: None,
        max_new_tokens: config.max_new_tokens,
        temperature: config.temperature,
        system_id: config.system_id.clone(),
    }
}

/// Stage 1: one backend description per distinct object, answered verbatim.
pub fn describe_key_objects(
    frame: &Frame,
    objects: &[ObjectId],
    backend: &dyn Backend,
    config: &InferenceConfig,
    cache: &Stage1Cache,
) -> Descriptions {
    let mut out = Descriptions::default();
    let mut seen = HashSet::new();
    for id in objects {
        if !seen.insert(id) {
            continue;
        }
        let Some(info) = frame.key_objects.get(id) else {
            out.unavailable.push(id.clone());
            continue;
        };
        let key = (frame.frame_id.clone(), id.clone(), config.system_id.clone());
        let text = cache.get_or_compute(key, || {
            let image = frame.image_path(info.tag.camera)?;
            let prompt = compose_prompt("", "", &keyobj_question(&info.tag), None);
            match generate_with_retry(backend, &request(config, prompt, image), &config.retry) {
                Ok(r) => Some(r.text),
                Err(e) => {
                    log::warn!("{}: stage-1 description of {id} failed: {e}", frame.frame_id);
                    None
                }
            }
        });
        match text {
            Some(t) => {
                out.by_object.insert(id.clone(), t);
            }
            None => out.unavailable.push(id.clone()),
        }
    }
    out
}

/// Result of answering one question, with what had to be left out.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionOutcome {
    pub answer: Answer,
    pub bundle: Option<PromptBundle>,
    pub unresolved: Vec<KeyObjectTag>,
    pub unavailable: Vec<ObjectId>,
}

pub fn answer_question(
    frame: &Frame,
    qa: &QaPair,
    backend: &dyn Backend,
    depth: &DepthIndex,
    config: &InferenceConfig,
    cache: &Stage1Cache,
) -> QuestionOutcome {
    let started = Instant::now();
    let plan = plan_prompt(frame, qa);
    let descriptions = if config.stage1 {
        describe_key_objects(frame, &plan.objects, backend, config, cache)
    } else {
        Descriptions::default()
    };
    let bundle = build_bundle(
        frame,
        qa,
        &plan,
        &descriptions.by_object,
        depth,
        config.prompt.cot_prefix(),
    );

    let mut answer = Answer {
        question_id: qa.question_id.clone(),
        system_id: config.system_id.clone(),
        scene_id: frame.scene_id.clone(),
        frame_id: frame.frame_id.clone(),
        kind: qa.kind,
        text: String::new(),
        stage1_desc_state: None,
        latency_ms: 0,
        error: None,
    };
    match &bundle {
        None => {
            answer.error = Some(format!("no image for {}", plan.selection.camera));
        }
        Some(b) => {
            if config.stage1 {
                answer.stage1_desc_state = Some(b.parts.desc_state.clone());
            }
            let req = request(config, b.prompt_text.clone(), &b.image_path);
            match generate_with_retry(backend, &req, &config.retry) {
                Ok(r) => answer.text = r.text,
                Err(e) => answer.error = Some(e.to_string()),
            }
        }
    }
    answer.latency_ms = started.elapsed().as_millis() as u64;
    QuestionOutcome {
        answer,
        bundle,
        unresolved: plan.unresolved,
        unavailable: descriptions.unavailable,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedQuestion {
    pub question_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Omission {
    pub question_id: String,
    pub what: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub system_id: String,
    pub total_questions: usize,
    pub resumed: usize,
    pub answered: usize,
    pub failed: Vec<FailedQuestion>,
    pub empty_answers: usize,
    pub stage1_calls: usize,
    pub omissions: Vec<Omission>,
}

impl RunReport {
    pub fn error_fraction(&self) -> f64 {
        if self.total_questions == 0 {
            0.0
        } else {
            self.failed.len() as f64 / self.total_questions as f64
        }
    }
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Predictions(#[from] PredictionsError),
    #[error("writing predictions: {0}")]
    Io(#[from] std::io::Error),
    #[error("existing predictions belong to system {found}, not {expected}")]
    ForeignPredictions { expected: String, found: String },
}

pub struct InferenceOutcome {
    pub run: SystemRun,
    pub report: RunReport,
    /// Prompts sent in this invocation, sorted by question id.
    pub bundles: Vec<PromptBundle>,
}

/// Answers every question of the corpus.
///
/// With `predictions`, questions already present in that file are skipped,
/// new answers are appended as they complete, and the file is finally
/// rewritten with all answers sorted by question id. Failed questions are
/// reported but not written, so a later resume retries them.
pub fn run_inference(
    corpus: &Corpus,
    backend: &dyn Backend,
    depth: &DepthIndex,
    config: &InferenceConfig,
    predictions: Option<&Path>,
) -> Result<InferenceOutcome, InferenceError> {
    let mut answers: BTreeMap<String, Answer> = BTreeMap::new();
    if let Some(path) = predictions.filter(|p| p.exists()) {
        for r in read_predictions(path)? {
            if r.system_id != config.system_id {
                return Err(InferenceError::ForeignPredictions {
                    expected: config.system_id.clone(),
                    found: r.system_id,
                });
            }
            answers.insert(r.question_id.clone(), r.into());
        }
    }

    let pending: Vec<(&Frame, &QaPair)> = corpus
        .questions()
        .filter(|(_, q)| !answers.contains_key(&q.question_id))
        .collect();
    let mut report = RunReport {
        system_id: config.system_id.clone(),
        total_questions: corpus.question_count(),
        resumed: corpus.question_count() - pending.len(),
        ..Default::default()
    };

    let mut sink = match predictions {
        Some(path) => Some(std::io::BufWriter::new(
            OpenOptions::new().create(true).append(true).open(path)?,
        )),
        None => None,
    };

    let cache = Stage1Cache::new();
    let next = AtomicUsize::new(0);
    let workers = config.concurrency.max(1).min(pending.len().max(1));
    let mut bundles = Vec::new();
    let mut write_error = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<QuestionOutcome>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (pending, next, cache) = (&pending, &next, &cache);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((frame, qa)) = pending.get(i) else { break };
                let outcome = answer_question(frame, qa, backend, depth, config, cache);
                if tx.send(outcome).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for outcome in rx {
            let QuestionOutcome {
                answer,
                bundle,
                unresolved,
                unavailable,
            } = outcome;
            for tag in unresolved {
                report.omissions.push(Omission {
                    question_id: answer.question_id.clone(),
                    what: format!("unresolved tag {tag}"),
                });
            }
            for id in unavailable {
                report.omissions.push(Omission {
                    question_id: answer.question_id.clone(),
                    what: format!("no description for {id}"),
                });
            }
            bundles.extend(bundle);
            if let Some(error) = answer.error.clone() {
                report.failed.push(FailedQuestion {
                    question_id: answer.question_id.clone(),
                    error,
                });
                continue;
            }
            if answer.text.trim().is_empty() {
                log::warn!("{}: backend returned an empty answer", answer.question_id);
                report.empty_answers += 1;
            }
            if let (Some(w), None) = (sink.as_mut(), write_error.as_ref()) {
                let line = serde_json::to_string(&PredictionRecord::from(&answer))
                    .map_err(std::io::Error::from)
                    .and_then(|l| writeln!(w, "{l}").and_then(|_| w.flush()));
                if let Err(e) = line {
                    write_error = Some(e);
                }
            }
            report.answered += 1;
            answers.insert(answer.question_id.clone(), answer);
        }
    });

    drop(sink);
    if let Some(e) = write_error {
        return Err(e.into());
    }
    report.stage1_calls = cache.calls();
    report.failed.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    report.omissions.sort_by(|a, b| (&a.question_id, &a.what).cmp(&(&b.question_id, &b.what)));
    bundles.sort_by(|a, b| a.question_id.cmp(&b.question_id));

    let run = SystemRun {
        system_id: config.system_id.clone(),
        answers,
        config_snapshot: serde_json::to_value(config).unwrap_or_default(),
    };
    if let Some(path) = predictions {
        write_predictions(path, &run.records())?;
    }
    Ok(InferenceOutcome {
        run,
        report,
        bundles,
    })
}
