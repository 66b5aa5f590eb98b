//! Subcommand drivers: each reads its inputs from the configuration, writes
//! its artifacts under the output directory and returns a one-line summary.
//!
//! JSON artifacts embed the configuration they were produced with; JSON
//! Lines artifacts get a `<name>.meta.json` sidecar instead. With `dry_run`
//! every input is read and validated but nothing is written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::augment::{augment_corpus, merge_into, TEMPLATE_VERSION};
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{load_corpus_with, Corpus, LoadError, LoadOptions};
use crate::depth::{build_depth_index, DepthError, DepthIndex};
use crate::fusion::{fuse, FusionError};
use crate::metrics::{score_corpus, write_per_question_csv, Component, MetricReport, MetricsError};
use crate::orchestrator::{
    load_run, run_inference, Backend, InferenceError, PredictionsError, SystemRun,
};
use crate::prompting::{plan_prompt, training_records};

pub const STATS_FILE: &str = "corpus_stats.json";
pub const AUGMENTED_FILE: &str = "augmented_qas.jsonl";
pub const DEPTH_INDEX_FILE: &str = "depth_index.jsonl";
pub const TRAIN_FILE: &str = "train_records.jsonl";
pub const FUSION_REPORT_FILE: &str = "fusion_report.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Predictions(#[from] PredictionsError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{failed} of {total} questions failed, above the allowed fraction {limit}")]
    ErrorBudget { failed: usize, total: usize, limit: f64 },
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Fusion(FusionError::Policy(_))
            | PipelineError::Metrics(MetricsError::Weights(_) | MetricsError::Config(_)) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path, e: impl ToString) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// What a subcommand did.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    /// Files written (or that would be written under `dry_run`).
    pub artifacts: Vec<PathBuf>,
}

struct Output<'a> {
    config: &'a PipelineConfig,
    dry_run: bool,
    artifacts: Vec<PathBuf>,
}

impl<'a> Output<'a> {
    fn new(config: &'a PipelineConfig, dry_run: bool) -> Self {
        Self {
            config,
            dry_run,
            artifacts: Vec::new(),
        }
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.config.paths.output_dir.join(rel)
    }

    /// Writes `bytes` to `path` through a temporary file and a rename.
    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
        self.artifacts.push(path.to_path_buf());
        if self.dry_run {
            return Ok(());
        }
        write_atomic(path, bytes)
    }

    /// Pretty JSON with the configuration snapshot under `config`.
    fn json(&mut self, path: &Path, body: &impl Serialize) -> Result<(), PipelineError> {
        let mut value = serde_json::to_value(body).map_err(|e| PipelineError::io(path, e))?;
        if let Value::Object(map) = &mut value {
            map.insert("config".into(), self.config.snapshot());
        }
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| PipelineError::io(path, e))?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    fn jsonl<T: Serialize>(&mut self, path: &Path, rows: &[T], meta: Value) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut buf, r).map_err(|e| PipelineError::io(path, e))?;
            buf.push(b'\n');
        }
        self.write(path, &buf)?;
        self.json(&meta_path(path), &meta)
    }

    fn finish(self, summary: String) -> Outcome {
        Outcome {
            summary,
            artifacts: self.artifacts,
        }
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(bytes)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| PipelineError::io(path, e))
}

/// Sidecar of a JSON Lines artifact: `x.jsonl` -> `x.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("artifact");
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn predictions_path(config: &PipelineConfig, system_id: &str) -> PathBuf {
    config.paths.output_dir.join("predictions").join(format!("{system_id}.jsonl"))
}

pub fn scores_path(config: &PipelineConfig, system_id: &str) -> PathBuf {
    config.paths.output_dir.join("scores").join(format!("{system_id}.json"))
}

pub fn load_corpus(config: &PipelineConfig) -> Result<Corpus, PipelineError> {
    let options = LoadOptions {
        kind_overrides: config.kind_overrides.clone().into_iter().collect(),
    };
    Ok(load_corpus_with(config.dataset()?, config.paths.split, &options)?)
}

/// The saved depth index if present, else one computed from the depth
/// directory, else an empty index.
pub fn load_depth(config: &PipelineConfig, corpus: &Corpus) -> Result<DepthIndex, PipelineError> {
    let saved = config.paths.output_dir.join(DEPTH_INDEX_FILE);
    if saved.is_file() {
        return Ok(DepthIndex::load(&saved)?);
    }
    match &config.paths.depth_dir {
        Some(dir) => {
            config.depth.validate().map_err(|e| ConfigError::new("depth", e))?;
            Ok(build_depth_index(corpus, dir, &config.depth).0)
        }
        None => {
            log::warn!("no depth index or depth directory; prompts carry no depth text");
            Ok(DepthIndex::default())
        }
    }
}

pub fn ingest(config: &PipelineConfig, dry_run: bool) -> Result<Outcome, PipelineError> {
    let corpus = load_corpus(config)?;
    let stats = corpus.stats();
    let mut out = Output::new(config, dry_run);
    let path = out.path(STATS_FILE);
    out.json(
        &path,
        &json!({ "stats": stats, "warnings": corpus.warnings }),
    )?;
    Ok(out.finish(format!(
        "ingested {} scenes, {} frames, {} questions, {} key objects ({} unresolved tags, {} warnings)",
        stats.scenes,
        stats.frames,
        stats.questions,
        stats.key_objects,
        stats.unresolved.len(),
        stats.warnings
    )))
}

pub fn augment(config: &PipelineConfig, dry_run: bool) -> Result<Outcome, PipelineError> {
    let corpus = load_corpus(config)?;
    let qas = augment_corpus(&corpus);
    let mut out = Output::new(config, dry_run);
    let path = out.path(AUGMENTED_FILE);
    out.jsonl(
        &path,
        &qas,
        json!({ "template_version": TEMPLATE_VERSION, "generated": qas.len() }),
    )?;
    Ok(out.finish(format!(
        "generated {} key-object questions over {} frames",
        qas.len(),
        corpus.frames.len()
    )))
}

pub fn depth_index(config: &PipelineConfig, dry_run: bool) -> Result<Outcome, PipelineError> {
    let corpus = load_corpus(config)?;
    let dir = config.depth_dir()?;
    let (index, misses) = build_depth_index(&corpus, dir, &config.depth);
    for m in &misses {
        log::warn!("{}/{}: {}", m.frame_id, m.object_id, m.reason);
    }
    let mut out = Output::new(config, dry_run);
    let path = out.path(DEPTH_INDEX_FILE);
    out.jsonl(
        &path,
        index.records(),
        json!({ "records": index.len(), "misses": misses }),
    )?;
    Ok(out.finish(format!(
        "indexed depth for {} key objects ({} without depth)",
        index.len(),
        misses.len()
    )))
}

pub fn export_train(config: &PipelineConfig, with_augmented: bool, dry_run: bool) -> Result<Outcome, PipelineError> {
    let mut corpus = load_corpus(config)?;
    let added = if with_augmented { merge_into(&mut corpus) } else { 0 };
    let depth = load_depth(config, &corpus)?;
    let (records, report) = training_records(&corpus, &depth);
    let mut out = Output::new(config, dry_run);
    let path = out.path(TRAIN_FILE);
    out.jsonl(
        &path,
        &records,
        json!({ "written": report.written, "augmented": added, "skipped": report.skipped }),
    )?;
    Ok(out.finish(format!(
        "exported {} training records ({} generated, {} skipped)",
        report.written,
        added,
        report.skipped.len()
    )))
}

#[derive(Default)]
pub struct InferOptions<'a> {
    /// Use this backend instead of the configured one.
    pub backend: Option<&'a dyn Backend>,
    /// Also write the prompts sent to the backend.
    pub dump_prompts: bool,
}

pub fn infer(config: &PipelineConfig, options: InferOptions, dry_run: bool) -> Result<Outcome, PipelineError> {
    let corpus = load_corpus(config)?;
    let depth = load_depth(config, &corpus)?;
    let inference = config.inference();
    let path = predictions_path(config, &inference.system_id);
    let mut out = Output::new(config, dry_run);
    if dry_run {
        let unresolved: usize = corpus.questions().map(|(f, q)| plan_prompt(f, q).unresolved.len()).sum();
        out.artifacts.push(path.clone());
        out.artifacts.push(meta_path(&path));
        return Ok(out.finish(format!(
            "would answer {} questions as {} ({} unresolved tags)",
            corpus.question_count(),
            inference.system_id,
            unresolved
        )));
    }

    let configured;
    let backend: &dyn Backend = match options.backend {
        Some(b) => b,
        None => {
            configured = config.backend();
            configured.as_ref()
        }
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let result = run_inference(&corpus, backend, &depth, &inference, Some(&path))?;
    out.artifacts.push(path.clone());
    // describes the file, not this invocation, so a resumed run rewrites it unchanged
    let r = &result.report;
    let meta = json!({
        "run": {
            "system_id": r.system_id,
            "total_questions": r.total_questions,
            "answers": result.run.answers.len(),
            "failed": r.failed,
        }
    });
    out.json(&meta_path(&path), &meta)?;
    if options.dump_prompts {
        let dump = config
            .paths
            .output_dir
            .join("prompts")
            .join(format!("{}.jsonl", inference.system_id));
        let mut buf = Vec::new();
        for b in &result.bundles {
            serde_json::to_writer(&mut buf, b).map_err(|e| PipelineError::io(&dump, e))?;
            buf.push(b'\n');
        }
        out.write(&dump, &buf)?;
    }

    for o in &r.omissions {
        log::warn!("{}: {}", o.question_id, o.what);
    }
    for f in &r.failed {
        log::error!("{}: {}", f.question_id, f.error);
    }
    if r.error_fraction() > inference.max_error_fraction {
        return Err(PipelineError::ErrorBudget {
            failed: r.failed.len(),
            total: r.total_questions,
            limit: inference.max_error_fraction,
        });
    }
    Ok(out.finish(format!(
        "{}: answered {}, resumed {}, failed {}, {} stage-1 calls",
        r.system_id,
        r.answered,
        r.resumed,
        r.failed.len(),
        r.stage1_calls
    )))
}

pub fn fuse_runs(config: &PipelineConfig, inputs: &[PathBuf], dry_run: bool) -> Result<Outcome, PipelineError> {
    let runs = inputs
        .iter()
        .map(|p| load_run(p))
        .collect::<Result<Vec<SystemRun>, _>>()?;
    let references = match &config.paths.dataset {
        Some(_) => Some(load_corpus(config)?.references()).filter(|r| !r.is_empty()),
        None => None,
    };
    let mut policy = config.fusion.clone();
    if policy.priority.is_empty() {
        // input order doubles as priority when none is configured
        policy.priority = runs.iter().map(|r| r.system_id.clone()).collect();
    }
    let (fused, report) = fuse(&runs, references.as_ref(), &policy, &config.metrics)?;

    let mut out = Output::new(config, dry_run);
    let path = predictions_path(config, &fused.system_id);
    out.jsonl(&path, &fused.records(), json!({ "fusion": fused.config_snapshot }))?;
    let report_path = out.path(FUSION_REPORT_FILE);
    out.json(&report_path, &report)?;
    let ties: usize = report.per_kind.values().map(|k| k.ties).sum();
    Ok(out.finish(format!(
        "fused {} systems into {} answers ({} ties, {} incomplete, {} unanswered)",
        runs.len(),
        fused.answers.len(),
        ties,
        report.incomplete.len(),
        report.unanswered.len()
    )))
}

pub fn score(config: &PipelineConfig, predictions: &Path, csv: bool, dry_run: bool) -> Result<Outcome, PipelineError> {
    let corpus = load_corpus(config)?;
    let run = load_run(predictions)?;
    let judge = config.metrics.judge.client();
    let mut metrics = config.metrics.clone();
    metrics.per_question |= csv;
    let mut report = score_corpus(&corpus, &run, &metrics, judge.as_deref())?;
    let per_question = if config.metrics.per_question {
        report.per_question.clone()
    } else {
        report.per_question.take()
    };

    let mut out = Output::new(config, dry_run);
    let path = scores_path(config, &report.system_id);
    out.json(&path, &report)?;
    if let (true, Some(rows)) = (csv, per_question) {
        let csv_path = path.with_extension("csv");
        let mut buf = Vec::new();
        write_per_question_csv(&rows, &mut buf).map_err(|e| PipelineError::io(&csv_path, e))?;
        out.write(&csv_path, &buf)?;
    }
    let final_score = report
        .final_score
        .map(|s| format!("{s:.4}"))
        .unwrap_or_else(|| "n/a (no weights)".into());
    Ok(out.finish(format!(
        "{}: scored {} questions, final score {final_score}",
        report.system_id, report.counts.questions
    )))
}

pub fn read_report(path: &Path) -> Result<MetricReport, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::io(path, e))
}

const TABLE_COLUMNS: [(&str, Option<Component>); 10] = [
    ("Accuracy", Some(Component::Accuracy)),
    ("ChatGPT", Some(Component::Chatgpt)),
    ("Bleu_1", Some(Component::Bleu1)),
    ("Bleu_2", Some(Component::Bleu2)),
    ("Bleu_3", Some(Component::Bleu3)),
    ("Bleu_4", Some(Component::Bleu4)),
    ("ROUGE_L", Some(Component::RougeL)),
    ("CIDEr", Some(Component::Cider)),
    ("Match", Some(Component::Match)),
    ("Final Score", None),
];

/// Renders reports as a fixed-width table, one row per system.
pub fn render_table(reports: &[MetricReport]) -> String {
    let cell = |r: &MetricReport, c: Option<Component>| {
        let v = match c {
            Some(c) => r.component(c),
            None => r.final_score,
        };
        match (v, c) {
            (None, _) => "-".to_string(),
            (Some(v), Some(Component::Chatgpt | Component::Match)) => format!("{v:.2}"),
            (Some(v), _) => format!("{v:.4}"),
        }
    };
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("System".to_string())
        .chain(TABLE_COLUMNS.iter().map(|(h, _)| h.to_string()))
        .collect()];
    for r in reports {
        let mut name = r.system_id.clone();
        if r.chatgpt_synthetic {
            name.push('*');
        }
        rows.push(
            std::iter::once(name)
                .chain(TABLE_COLUMNS.iter().map(|(_, c)| cell(r, *c)))
                .collect(),
        );
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|row| row[i].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for (n, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(text, "{}", line.join("  ").trim_end());
        if n == 0 {
            let _ = writeln!(text, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    if reports.iter().any(|r| r.chatgpt_synthetic) {
        text.push_str("* judge score from a stub\n");
    }
    let dropped: BTreeMap<&str, Vec<&str>> = reports
        .iter()
        .filter(|r| !r.renormalized_without.is_empty())
        .map(|r| {
            (
                r.system_id.as_str(),
                r.renormalized_without.iter().map(|c| c.as_str()).collect(),
            )
        })
        .collect();
    for (system, comps) in dropped {
        let _ = writeln!(text, "{system}: final score renormalized without {}", comps.join(", "));
    }
    text
}

pub fn report(paths: &[PathBuf]) -> Result<Outcome, PipelineError> {
    let reports = paths
        .iter()
        .map(|p| read_report(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Outcome {
        summary: render_table(&reports),
        artifacts: Vec::new(),
    })
}
