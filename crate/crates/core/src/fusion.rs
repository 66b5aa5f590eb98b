//! Combining several systems' answers into one run.
//!
//! Closed-form questions are decided by vote over normalized answers. Open
//! questions pick the candidate scoring best against the reference, or a
//! fixed system when no reference is available.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QuestionKind;
use crate::metrics::{MetricsConfig, PerQuestionMetric};
use crate::normalize::Normalizer;
use crate::orchestrator::{Answer, SystemRun};
use crate::par;

pub const FUSED_SYSTEM_ID: &str = "fusion";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    Vote,
    MetricArgmax {
        #[serde(default)]
        metric: PerQuestionMetric,
    },
    FixedSystem {
        system_id: String,
    },
}

impl Strategy {
    fn name(&self) -> &'static str {
        match self {
            Strategy::Vote => "vote",
            Strategy::MetricArgmax { .. } => "metric_argmax",
            Strategy::FixedSystem { .. } => "fixed_system",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionPolicy {
    pub routing: BTreeMap<QuestionKind, Strategy>,
    /// System ids, best first. Breaks ties and orders fallbacks.
    pub priority: Vec<String>,
    pub normalizer: Normalizer,
    /// System used when metric selection is impossible (no reference, or no
    /// candidate could be scored). Defaults to the first system in `priority`.
    pub fallback: Option<String>,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        let routing = BTreeMap::from([
            (QuestionKind::MultipleChoice, Strategy::Vote),
            (QuestionKind::YesNo, Strategy::Vote),
            (
                QuestionKind::Open,
                Strategy::MetricArgmax {
                    metric: PerQuestionMetric::RougeL,
                },
            ),
        ]);
        Self {
            routing,
            priority: Vec::new(),
            normalizer: Normalizer::default(),
            fallback: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("nothing to fuse")]
    NoRuns,
    #[error("no answers to vote on")]
    NoAnswers,
    #[error("system {0} appears in more than one run")]
    DuplicateSystem(String),
    #[error("fusion policy: {0}")]
    Policy(String),
}

impl FusionPolicy {
    /// Checks the policy against the systems being fused.
    pub fn validate(&self, systems: &[&str]) -> Result<(), FusionError> {
        for kind in QuestionKind::ALL {
            if !self.routing.contains_key(&kind) {
                return Err(FusionError::Policy(format!("routing.{kind} is missing")));
            }
        }
        let mut seen = BTreeSet::new();
        for s in &self.priority {
            if !seen.insert(s.as_str()) {
                return Err(FusionError::Policy(format!("priority lists {s} twice")));
            }
        }
        for s in systems {
            if !seen.contains(s) {
                return Err(FusionError::Policy(format!("priority does not rank system {s}")));
            }
        }
        let named = self
            .routing
            .values()
            .filter_map(|s| match s {
                Strategy::FixedSystem { system_id } => Some(system_id),
                _ => None,
            })
            .chain(self.fallback.iter());
        for id in named {
            if !systems.contains(&id.as_str()) {
                return Err(FusionError::Policy(format!("{id} is not among the fused systems")));
            }
        }
        Ok(())
    }

    fn rank(&self, system_id: &str) -> usize {
        self.priority
            .iter()
            .position(|s| s == system_id)
            .unwrap_or(self.priority.len())
    }

    fn fallback_system(&self) -> Option<&str> {
        self.fallback.as_deref().or(self.priority.first().map(String::as_str))
    }
}

/// The winning answer of a vote.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome<'a> {
    pub system_id: &'a str,
    pub text: &'a str,
    /// More than one answer class had the top count.
    pub tied: bool,
}

/// Modal answer under `normalizer`. Ties go to the class holding the
/// highest-priority system, and the winner is that class's highest-priority
/// original text.
pub fn vote<'a>(
    answers: &[(&'a str, &'a str)],
    priority: &[String],
    normalizer: &Normalizer,
    kind: QuestionKind,
) -> Result<VoteOutcome<'a>, FusionError> {
    let rank = |s: &str| priority.iter().position(|p| p == s).unwrap_or(priority.len());
    // normalized text -> (count, best member)
    let mut classes: HashMap<String, (usize, (&'a str, &'a str))> = HashMap::new();
    for &(system, text) in answers {
        let entry = classes
            .entry(normalizer.normalize(text, kind))
            .or_insert((0, (system, text)));
        entry.0 += 1;
        if rank(system) < rank(entry.1 .0) {
            entry.1 = (system, text);
        }
    }
    let top = classes.values().map(|c| c.0).max().ok_or(FusionError::NoAnswers)?;
    let mut winners: Vec<(&'a str, &'a str)> = classes
        .values()
        .filter(|c| c.0 == top)
        .map(|c| c.1)
        .collect();
    let tied = winners.len() > 1;
    winners.sort_by_key(|(s, t)| (rank(s), *s, *t));
    let (system_id, text) = winners[0];
    Ok(VoteOutcome {
        system_id,
        text,
        tied,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxOutcome<'a> {
    pub system_id: &'a str,
    pub text: &'a str,
    pub score: f64,
    pub tied: bool,
}

/// Candidate scoring highest against `reference`; ties go to priority order.
/// Candidates the metric cannot score are left out. `None` when none remain.
pub fn metric_argmax<'a>(
    answers: &[(&'a str, &'a str)],
    reference: &str,
    metric: PerQuestionMetric,
    priority: &[String],
    config: &MetricsConfig,
) -> Option<ArgmaxOutcome<'a>> {
    let rank = |s: &str| priority.iter().position(|p| p == s).unwrap_or(priority.len());
    let scored: Vec<(f64, &'a str, &'a str)> = answers
        .iter()
        .filter_map(|&(system, text)| match metric.score(text, reference, config) {
            Some(s) => Some((s, system, text)),
            None => {
                log::debug!("{system}: answer cannot be scored with {metric:?}");
                None
            }
        })
        .collect();
    let best = scored.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let mut top: Vec<&(f64, &str, &str)> = scored.iter().filter(|c| c.0 == best).collect();
    top.sort_by_key(|c| (rank(c.1), c.1));
    let &&(score, system_id, text) = top.first()?;
    Some(ArgmaxOutcome {
        system_id,
        text,
        score,
        tied: top.len() > 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionChoice {
    pub question_id: String,
    pub kind: QuestionKind,
    /// Strategy that actually decided, after fallbacks.
    pub strategy: String,
    pub system_id: String,
    pub tied: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KindStats {
    pub questions: usize,
    /// Questions where every answering system gave the same normalized answer.
    pub unanimous: usize,
    pub agreement_rate: f64,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingAnswers {
    pub question_id: String,
    pub systems: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FusionReport {
    pub systems: Vec<String>,
    pub per_kind: BTreeMap<QuestionKind, KindStats>,
    pub choices: Vec<FusionChoice>,
    /// Questions some systems did not answer.
    pub incomplete: Vec<MissingAnswers>,
    /// Referenced questions no system answered; absent from the fused run.
    pub unanswered: Vec<String>,
}

struct Decision {
    answer: Answer,
    choice: FusionChoice,
    unanimous: bool,
    missing: Vec<String>,
}

fn decide(
    qid: &str,
    runs: &[&SystemRun],
    references: Option<&BTreeMap<String, String>>,
    policy: &FusionPolicy,
    metrics: &MetricsConfig,
) -> Option<Decision> {
    let present: Vec<&Answer> = runs.iter().filter_map(|r| r.answers.get(qid)).collect();
    let missing: Vec<String> = runs
        .iter()
        .filter(|r| !r.answers.contains_key(qid))
        .map(|r| r.system_id.clone())
        .collect();
    let lead = *present.first()?;
    let kind = lead.kind;
    if present.iter().any(|a| a.kind != kind) {
        log::warn!("{qid}: systems disagree on the question kind, using {kind}");
    }
    let candidates: Vec<(&str, &str)> = present
        .iter()
        .map(|a| (a.system_id.as_str(), a.text.as_str()))
        .collect();
    let normalized: BTreeSet<String> = candidates
        .iter()
        .map(|(_, t)| policy.normalizer.normalize(t, kind))
        .collect();

    let fixed = |wanted: Option<&str>| {
        wanted
            .and_then(|w| candidates.iter().find(|c| c.0 == w))
            .or_else(|| candidates.iter().min_by_key(|c| (policy.rank(c.0), c.0)))
            .copied()
    };
    let strategy = &policy.routing[&kind];
    let (used, (system_id, tied)) = match strategy {
        Strategy::Vote => {
            let v = vote(&candidates, &policy.priority, &policy.normalizer, kind).ok()?;
            ("vote", (v.system_id, v.tied))
        }
        Strategy::MetricArgmax { metric } => {
            let picked = references
                .and_then(|refs| refs.get(qid))
                .and_then(|r| metric_argmax(&candidates, r, *metric, &policy.priority, metrics));
            match picked {
                Some(p) => ("metric_argmax", (p.system_id, p.tied)),
                None => ("fixed_system", (fixed(policy.fallback_system())?.0, false)),
            }
        }
        Strategy::FixedSystem { system_id } => ("fixed_system", (fixed(Some(system_id))?.0, false)),
    };
    let chosen = present.iter().find(|a| a.system_id == system_id)?;
    let answer = Answer {
        system_id: FUSED_SYSTEM_ID.to_string(),
        latency_ms: 0,
        error: None,
        kind,
        ..(*chosen).clone()
    };
    Some(Decision {
        choice: FusionChoice {
            question_id: qid.to_string(),
            kind,
            strategy: used.to_string(),
            system_id: system_id.to_string(),
            tied,
        },
        answer,
        unanimous: normalized.len() == 1,
        missing,
    })
}

/// Fuses `runs` question by question.
///
/// `references` enables metric selection for open questions; without them
/// those questions use the fallback system.
pub fn fuse(
    runs: &[SystemRun],
    references: Option<&BTreeMap<String, String>>,
    policy: &FusionPolicy,
    metrics: &MetricsConfig,
) -> Result<(SystemRun, FusionReport), FusionError> {
    if runs.is_empty() {
        return Err(FusionError::NoRuns);
    }
    let mut ids = BTreeSet::new();
    for r in runs {
        if !ids.insert(r.system_id.as_str()) {
            return Err(FusionError::DuplicateSystem(r.system_id.clone()));
        }
    }
    let systems: Vec<&str> = runs.iter().map(|r| r.system_id.as_str()).collect();
    policy.validate(&systems)?;
    // priority order, so the first present answer is the best-ranked one
    let mut ordered: Vec<&SystemRun> = runs.iter().collect();
    ordered.sort_by_key(|r| policy.rank(&r.system_id));

    let mut question_ids: BTreeSet<&str> = runs
        .iter()
        .flat_map(|r| r.answers.keys().map(String::as_str))
        .collect();
    if let Some(refs) = references {
        question_ids.extend(refs.keys().map(String::as_str));
    }
    let question_ids: Vec<&str> = question_ids.into_iter().collect();

    let decisions = par::map(&question_ids, |qid| decide(qid, &ordered, references, policy, metrics));

    let mut report = FusionReport {
        systems: ordered.iter().map(|r| r.system_id.clone()).collect(),
        ..Default::default()
    };
    for kind in QuestionKind::ALL {
        report.per_kind.insert(kind, KindStats::default());
    }
    let mut answers = BTreeMap::new();
    for (qid, d) in question_ids.iter().zip(decisions) {
        let Some(d) = d else {
            log::warn!("{qid}: no system answered");
            report.unanswered.push(qid.to_string());
            continue;
        };
        let stats = report.per_kind.get_mut(&d.choice.kind).expect("all kinds present");
        stats.questions += 1;
        stats.unanimous += d.unanimous as usize;
        stats.ties += d.choice.tied as usize;
        if !d.missing.is_empty() {
            report.incomplete.push(MissingAnswers {
                question_id: qid.to_string(),
                systems: d.missing,
            });
        }
        report.choices.push(d.choice);
        answers.insert(qid.to_string(), d.answer);
    }
    for stats in report.per_kind.values_mut() {
        if stats.questions > 0 {
            stats.agreement_rate = stats.unanimous as f64 / stats.questions as f64;
        }
    }
    let run = SystemRun {
        system_id: FUSED_SYSTEM_ID.to_string(),
        answers,
        config_snapshot: serde_json::json!({
            "systems": report.systems,
            "policy": policy,
            "strategies": QuestionKind::ALL
                .iter()
                .map(|k| (k.as_str(), policy.routing[k].name()))
                .collect::<BTreeMap<_, _>>(),
        }),
    };
    Ok((run, report))
}
