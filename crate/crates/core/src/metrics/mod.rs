//! Answer scoring: accuracy, BLEU-1..4, ROUGE-L, CIDEr-D, coordinate match,
//! an external judge, and their weighted combination.

pub mod bleu;
pub mod cider;
pub mod coords;
pub mod judge;
pub mod rouge;
pub mod tokenize;

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu_n, bleu_scores};
pub use cider::{cider, CiderItem, DEFAULT_SIGMA};
pub use coords::{coordinate_pairs, match_score, DEFAULT_MATCH_THRESHOLD_PX};
pub use judge::{judge_score, HttpJudge, JudgeClient, JudgeConfig, JudgeError, JudgeItem, StubJudge};
pub use rouge::{rouge_l, DEFAULT_BETA};
pub use tokenize::tokenize;

use crate::dataset::{Corpus, QuestionKind};
use crate::normalize::Normalizer;
use crate::orchestrator::SystemRun;
use crate::par;

/// A component of the final score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Accuracy,
    Chatgpt,
    Match,
    #[serde(rename = "bleu_1")]
    Bleu1,
    #[serde(rename = "bleu_2")]
    Bleu2,
    #[serde(rename = "bleu_3")]
    Bleu3,
    #[serde(rename = "bleu_4")]
    Bleu4,
    RougeL,
    Cider,
}

impl Component {
    pub const ALL: [Component; 9] = [
        Component::Accuracy,
        Component::Chatgpt,
        Component::Match,
        Component::Bleu1,
        Component::Bleu2,
        Component::Bleu3,
        Component::Bleu4,
        Component::RougeL,
        Component::Cider,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Accuracy => "accuracy",
            Component::Chatgpt => "chatgpt",
            Component::Match => "match",
            Component::Bleu1 => "bleu_1",
            Component::Bleu2 => "bleu_2",
            Component::Bleu3 => "bleu_3",
            Component::Bleu4 => "bleu_4",
            Component::RougeL => "rouge_l",
            Component::Cider => "cider",
        }
    }

    /// Maps the raw value onto [0, 1].
    pub fn normalize(self, value: f64) -> f64 {
        match self {
            Component::Chatgpt | Component::Match => value / 100.0,
            Component::Cider => value / 10.0,
            _ => value,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Final-score weights. Unlisted components weigh 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreWeights {
    pub accuracy: f64,
    pub chatgpt: f64,
    #[serde(rename = "match")]
    pub match_score: f64,
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

impl ScoreWeights {
    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::Accuracy => self.accuracy,
            Component::Chatgpt => self.chatgpt,
            Component::Match => self.match_score,
            Component::Bleu1 => self.bleu_1,
            Component::Bleu2 => self.bleu_2,
            Component::Bleu3 => self.bleu_3,
            Component::Bleu4 => self.bleu_4,
            Component::RougeL => self.rouge_l,
            Component::Cider => self.cider,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        for c in Component::ALL {
            let w = self.get(c);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(MetricsError::Weights(format!("{c} weight {w} must be finite and >= 0")));
            }
        }
        let sum: f64 = Component::ALL.iter().map(|&c| self.get(c)).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetricsError::Weights(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Per-question scores usable for picking between candidate answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerQuestionMetric {
    #[default]
    RougeL,
    #[serde(rename = "bleu_1")]
    Bleu1,
    #[serde(rename = "bleu_2")]
    Bleu2,
    #[serde(rename = "bleu_3")]
    Bleu3,
    #[serde(rename = "bleu_4")]
    Bleu4,
    Match,
}

impl PerQuestionMetric {
    /// Score of `candidate` against `reference`; `None` when the metric is
    /// undefined for this pair.
    pub fn score(self, candidate: &str, reference: &str, config: &MetricsConfig) -> Option<f64> {
        let bleu = |n: usize| {
            let refs = [tokenize(reference)];
            bleu_scores(&tokenize(candidate), &refs)[n - 1]
        };
        let s = match self {
            PerQuestionMetric::RougeL => {
                rouge::rouge_l_tokens(&tokenize(candidate), &[tokenize(reference)], config.rouge_beta)
            }
            PerQuestionMetric::Bleu1 => bleu(1),
            PerQuestionMetric::Bleu2 => bleu(2),
            PerQuestionMetric::Bleu3 => bleu(3),
            PerQuestionMetric::Bleu4 => bleu(4),
            PerQuestionMetric::Match => match_score(candidate, reference, config.match_threshold)?,
        };
        s.is_finite().then_some(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Required for a final score; there is no default weighting.
    pub weights: Option<ScoreWeights>,
    pub rouge_beta: f64,
    pub cider_sigma: f64,
    pub match_threshold: f64,
    /// Score over the present components, rescaling their weights, when a
    /// weighted component is undefined. A missing judge score always does.
    pub renormalize_missing: bool,
    pub normalizer: Normalizer,
    pub judge: JudgeConfig,
    /// Include per-question scores in the report.
    pub per_question: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            weights: None,
            rouge_beta: DEFAULT_BETA,
            cider_sigma: DEFAULT_SIGMA,
            match_threshold: DEFAULT_MATCH_THRESHOLD_PX,
            renormalize_missing: false,
            normalizer: Normalizer::default(),
            judge: JudgeConfig::None,
            per_question: false,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if let Some(w) = &self.weights {
            w.validate()?;
        }
        if !(self.rouge_beta.is_finite() && self.rouge_beta > 0.0) {
            return Err(MetricsError::Config("rouge_beta must be > 0".into()));
        }
        if !(self.cider_sigma.is_finite() && self.cider_sigma > 0.0) {
            return Err(MetricsError::Config("cider_sigma must be > 0".into()));
        }
        if !(self.match_threshold.is_finite() && self.match_threshold >= 0.0) {
            return Err(MetricsError::Config("match_threshold must be >= 0".into()));
        }
        self.judge.validate().map_err(MetricsError::Config)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("invalid metrics config: {0}")]
    Config(String),
    #[error("weighted component {0} is undefined for this corpus")]
    MissingComponent(Component),
    #[error("no weight left after dropping undefined components")]
    NothingToScore,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub questions: usize,
    pub missing_predictions: usize,
    pub closed: usize,
    pub open: usize,
    pub with_coordinates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub kind: QuestionKind,
    pub correct: Option<bool>,
    pub bleu_1: Option<f64>,
    pub bleu_2: Option<f64>,
    pub bleu_3: Option<f64>,
    pub bleu_4: Option<f64>,
    pub rouge_l: Option<f64>,
    pub cider: Option<f64>,
    #[serde(rename = "match")]
    pub match_score: Option<f64>,
    pub chatgpt: Option<f64>,
}

/// Corpus-level scores. A field is `None` when no question supports it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub system_id: String,
    pub accuracy: Option<f64>,
    pub chatgpt: Option<f64>,
    /// The judge score came from a stub, not a real judge.
    pub chatgpt_synthetic: bool,
    pub bleu_1: Option<f64>,
    pub bleu_2: Option<f64>,
    pub bleu_3: Option<f64>,
    pub bleu_4: Option<f64>,
    pub rouge_l: Option<f64>,
    pub cider: Option<f64>,
    #[serde(rename = "match")]
    pub match_score: Option<f64>,
    pub final_score: Option<f64>,
    /// Components that were weighted but undefined and left out of the final score.
    pub renormalized_without: Vec<Component>,
    pub counts: ScoreCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_question: Option<Vec<QuestionScore>>,
}

impl MetricReport {
    pub fn component(&self, c: Component) -> Option<f64> {
        match c {
            Component::Accuracy => self.accuracy,
            Component::Chatgpt => self.chatgpt,
            Component::Match => self.match_score,
            Component::Bleu1 => self.bleu_1,
            Component::Bleu2 => self.bleu_2,
            Component::Bleu3 => self.bleu_3,
            Component::Bleu4 => self.bleu_4,
            Component::RougeL => self.rouge_l,
            Component::Cider => self.cider,
        }
    }
}

/// Weighted sum of normalized components.
///
/// A weighted component that is undefined is an error unless `renormalize`
/// is set, in which case the remaining weights are rescaled to sum to 1.
/// Returns the score and the components left out.
pub fn final_score(
    report: &MetricReport,
    weights: &ScoreWeights,
    renormalize: bool,
) -> Result<(f64, Vec<Component>), MetricsError> {
    weights.validate()?;
    let mut dropped = Vec::new();
    let mut total = 0.0;
    let mut used = 0.0;
    for c in Component::ALL {
        let w = weights.get(c);
        if w == 0.0 {
            continue;
        }
        match report.component(c) {
            Some(v) => {
                total += w * c.normalize(v);
                used += w;
            }
            None if renormalize => dropped.push(c),
            None => return Err(MetricsError::MissingComponent(c)),
        }
    }
    if dropped.is_empty() {
        return Ok((total, dropped));
    }
    if used == 0.0 {
        return Err(MetricsError::NothingToScore);
    }
    Ok((total / used, dropped))
}

/// Fraction of closed-form questions whose normalized prediction equals the
/// normalized reference.
pub fn accuracy<'a>(
    items: impl IntoIterator<Item = (&'a str, &'a str, QuestionKind)>,
    normalizer: &Normalizer,
) -> Option<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for (pred, reference, kind) in items {
        if !kind.is_closed() {
            continue;
        }
        total += 1;
        if normalizer.normalize(pred, kind) == normalizer.normalize(reference, kind) {
            right += 1;
        }
    }
    (total > 0).then(|| right as f64 / total as f64)
}

/// One question to score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreItem {
    pub question_id: String,
    pub kind: QuestionKind,
    pub question: String,
    pub prediction: String,
    pub reference: String,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores `items`, ordered by question id so the result does not depend on
/// input order.
///
/// Closed questions feed accuracy; open questions feed BLEU, ROUGE-L, CIDEr
/// and the judge; every question whose reference carries coordinates feeds
/// the match score.
pub fn score_items(
    system_id: &str,
    items: &[ScoreItem],
    config: &MetricsConfig,
    judge: Option<&dyn JudgeClient>,
) -> Result<MetricReport, MetricsError> {
    config.validate()?;
    let mut sorted: Vec<&ScoreItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.question_id.cmp(&b.question_id));

    let mut per_q: Vec<QuestionScore> = par::map(&sorted, |it| {
        let mut q = QuestionScore {
            question_id: it.question_id.clone(),
            kind: it.kind,
            correct: None,
            bleu_1: None,
            bleu_2: None,
            bleu_3: None,
            bleu_4: None,
            rouge_l: None,
            cider: None,
            match_score: match_score(&it.prediction, &it.reference, config.match_threshold),
            chatgpt: None,
        };
        if it.kind.is_closed() {
            q.correct = Some(
                config.normalizer.normalize(&it.prediction, it.kind)
                    == config.normalizer.normalize(&it.reference, it.kind),
            );
        } else {
            let cand = tokenize(&it.prediction);
            let refs = [tokenize(&it.reference)];
            let b = bleu_scores(&cand, &refs);
            q.bleu_1 = Some(b[0]);
            q.bleu_2 = Some(b[1]);
            q.bleu_3 = Some(b[2]);
            q.bleu_4 = Some(b[3]);
            q.rouge_l = Some(rouge::rouge_l_tokens(&cand, &refs, config.rouge_beta));
        }
        q
    });

    let open: Vec<usize> = (0..sorted.len()).filter(|&i| !sorted[i].kind.is_closed()).collect();
    let cider_items: Vec<CiderItem> = open
        .iter()
        .map(|&i| CiderItem {
            candidate: tokenize(&sorted[i].prediction),
            references: vec![tokenize(&sorted[i].reference)],
        })
        .collect();
    for (&i, s) in open.iter().zip(cider::cider_per_question(&cider_items, config.cider_sigma)) {
        per_q[i].cider = Some(s);
    }

    let mut report = MetricReport {
        system_id: system_id.to_string(),
        ..Default::default()
    };
    if let Some(client) = judge {
        let judged: Vec<JudgeItem> = open
            .iter()
            .map(|&i| JudgeItem {
                question: &sorted[i].question,
                reference: &sorted[i].reference,
                prediction: &sorted[i].prediction,
            })
            .collect();
        if let Some(out) = judge_score(&judged, client) {
            for (&i, s) in open.iter().zip(&out.per_question) {
                per_q[i].chatgpt = Some(*s);
            }
            report.chatgpt = Some(out.score);
            report.chatgpt_synthetic = out.synthetic;
        }
    }

    report.accuracy = mean(per_q.iter().filter_map(|q| q.correct).map(|c| c as u8 as f64));
    report.bleu_1 = mean(per_q.iter().filter_map(|q| q.bleu_1));
    report.bleu_2 = mean(per_q.iter().filter_map(|q| q.bleu_2));
    report.bleu_3 = mean(per_q.iter().filter_map(|q| q.bleu_3));
    report.bleu_4 = mean(per_q.iter().filter_map(|q| q.bleu_4));
    report.rouge_l = mean(per_q.iter().filter_map(|q| q.rouge_l));
    report.cider = mean(per_q.iter().filter_map(|q| q.cider));
    report.match_score = mean(per_q.iter().filter_map(|q| q.match_score));
    report.counts = ScoreCounts {
        questions: sorted.len(),
        missing_predictions: 0,
        closed: sorted.len() - open.len(),
        open: open.len(),
        with_coordinates: per_q.iter().filter(|q| q.match_score.is_some()).count(),
    };

    if let Some(w) = &config.weights {
        // an absent judge never blocks the final score
        let blocking = Component::ALL.into_iter().find(|&c| {
            c != Component::Chatgpt && w.get(c) > 0.0 && report.component(c).is_none()
        });
        if let (Some(c), false) = (blocking, config.renormalize_missing) {
            return Err(MetricsError::MissingComponent(c));
        }
        let (score, dropped) = final_score(&report, w, true)?;
        if !dropped.is_empty() {
            log::warn!(
                "final score renormalized without {}",
                dropped.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
            );
        }
        report.final_score = Some(score);
        report.renormalized_without = dropped;
    }
    if config.per_question {
        report.per_question = Some(per_q);
    }
    Ok(report)
}

/// Scores a system run against the corpus references. Questions without a
/// reference are skipped; questions the run did not answer score as empty
/// answers.
pub fn score_corpus(
    corpus: &Corpus,
    run: &SystemRun,
    config: &MetricsConfig,
    judge: Option<&dyn JudgeClient>,
) -> Result<MetricReport, MetricsError> {
    let mut missing = 0;
    let items: Vec<ScoreItem> = corpus
        .questions()
        .filter_map(|(_, qa)| {
            let reference = qa.answer.clone()?;
            let prediction = match run.answers.get(&qa.question_id) {
                Some(a) => a.text.clone(),
                None => {
                    missing += 1;
                    String::new()
                }
            };
            Some(ScoreItem {
                question_id: qa.question_id.clone(),
                kind: qa.kind,
                question: qa.question.clone(),
                prediction,
                reference,
            })
        })
        .collect();
    if missing > 0 {
        log::warn!("{}: {missing} questions have no prediction", run.system_id);
    }
    let mut report = score_items(&run.system_id, &items, config, judge)?;
    report.counts.missing_predictions = missing;
    Ok(report)
}

/// Writes per-question scores as CSV; undefined scores are empty cells.
pub fn write_per_question_csv(scores: &[QuestionScore], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "question_id", "kind", "correct", "bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_l", "cider",
        "match", "chatgpt",
    ])?;
    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for q in scores {
        w.write_record([
            q.question_id.clone(),
            q.kind.as_str().to_string(),
            q.correct.map(|c| c.to_string()).unwrap_or_default(),
            num(q.bleu_1),
            num(q.bleu_2),
            num(q.bleu_3),
            num(q.bleu_4),
            num(q.rouge_l),
            num(q.cider),
            num(q.match_score),
            num(q.chatgpt),
        ])?;
    }
    w.flush()?;
    Ok(())
}
