//! Predictions files: one JSON object per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Answer, SystemRun};
use crate::dataset::QuestionKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub scene_id: String,
    pub frame_id: String,
    pub system_id: String,
    pub kind: QuestionKind,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1: Option<String>,
}

impl From<&Answer> for PredictionRecord {
    fn from(a: &Answer) -> Self {
        PredictionRecord {
            question_id: a.question_id.clone(),
            scene_id: a.scene_id.clone(),
            frame_id: a.frame_id.clone(),
            system_id: a.system_id.clone(),
            kind: a.kind,
            answer: a.text.clone(),
            stage1: a.stage1_desc_state.clone(),
        }
    }
}

impl From<PredictionRecord> for Answer {
    fn from(r: PredictionRecord) -> Self {
        Answer {
            question_id: r.question_id,
            system_id: r.system_id,
            scene_id: r.scene_id,
            frame_id: r.frame_id,
            kind: r.kind,
            text: r.answer,
            stage1_desc_state: r.stage1,
            latency_ms: 0,
            error: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PredictionsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: duplicate question id {question_id}")]
    Duplicate { path: String, question_id: String },
    #[error("{path}: mixes system ids {first} and {other}")]
    MixedSystems {
        path: String,
        first: String,
        other: String,
    },
}

/// Reads a predictions file. A malformed final line (an interrupted append)
/// is dropped with a warning; malformed lines elsewhere are errors.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, PredictionsError> {
    let p = path.display().to_string();
    let f = File::open(path).map_err(|source| PredictionsError::Io {
        path: p.clone(),
        source,
    })?;
    let lines: Vec<String> = BufReader::new(f)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| PredictionsError::Io {
            path: p.clone(),
            source,
        })?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) if Some(i) == last => {
                log::warn!("{p}: dropping truncated last line: {e}");
            }
            Err(source) => {
                return Err(PredictionsError::Parse {
                    path: p,
                    line: i + 1,
                    source,
                })
            }
        }
    }
    Ok(out)
}

/// Writes records sorted by question id, replacing `path` atomically.
pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> std::io::Result<()> {
    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for r in sorted {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)
}

/// Loads a predictions file as one system's run.
pub fn load_run(path: &Path) -> Result<SystemRun, PredictionsError> {
    let p = path.display().to_string();
    let records = read_predictions(path)?;
    let system_id = records.first().map(|r| r.system_id.clone()).unwrap_or_default();
    let mut answers = BTreeMap::new();
    for r in records {
        if r.system_id != system_id {
            return Err(PredictionsError::MixedSystems {
                path: p,
                first: system_id,
                other: r.system_id,
            });
        }
        let qid = r.question_id.clone();
        if answers.insert(qid.clone(), Answer::from(r)).is_some() {
            return Err(PredictionsError::Duplicate {
                path: p,
                question_id: qid,
            });
        }
    }
    Ok(SystemRun {
        system_id,
        answers,
        config_snapshot: serde_json::Value::Null,
    })
}
