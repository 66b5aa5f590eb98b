//! External judge scoring (0-100 per question).

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JudgeError {
    #[error("judge transport: {0}")]
    Transport(String),
    #[error("judge returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("judge response: {0}")]
    Malformed(String),
    #[error("judge score {0} outside [0, 100]")]
    OutOfRange(f64),
}

pub trait JudgeClient: Send + Sync {
    fn judge(&self, question: &str, reference: &str, prediction: &str) -> Result<f64, JudgeError>;

    /// True when scores do not come from a real judge.
    fn synthetic(&self) -> bool {
        false
    }
}

/// Returns the same score for every question.
#[derive(Debug, Clone)]
pub struct StubJudge(pub f64);

impl JudgeClient for StubJudge {
    fn judge(&self, _: &str, _: &str, _: &str) -> Result<f64, JudgeError> {
        Ok(self.0)
    }

    fn synthetic(&self) -> bool {
        true
    }
}

pub fn judge_prompt(question: &str, reference: &str, prediction: &str) -> String {
    format!(
        "Rate the answer against the correct answer on a scale from 0 to 100, where higher \
         means closer to the correct answer. Output the number only.\n\
         Question: {question}\nCorrect answer: {reference}\nAnswer: {prediction}"
    )
}

#[derive(Serialize)]
struct JudgeRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct JudgeResponse {
    score: f64,
}

/// Judge reached over HTTP: `POST {url}` with `{prompt}`, answering `{score}`.
pub struct HttpJudge {
    agent: ureq::Agent,
    url: String,
}

impl HttpJudge {
    pub fn new(url: &str, timeout: Duration) -> Self {
        Self {
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build()
                .into(),
            url: url.to_string(),
        }
    }
}

impl JudgeClient for HttpJudge {
    fn judge(&self, question: &str, reference: &str, prediction: &str) -> Result<f64, JudgeError> {
        let prompt = judge_prompt(question, reference, prediction);
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(JudgeRequest { prompt: &prompt })
            .map_err(|e| JudgeError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| JudgeError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(JudgeError::Status { status, body });
        }
        let r: JudgeResponse =
            serde_json::from_str(&body).map_err(|e| JudgeError::Malformed(e.to_string()))?;
        if !(0.0..=100.0).contains(&r.score) {
            return Err(JudgeError::OutOfRange(r.score));
        }
        Ok(r.score)
    }
}

/// Which judge scores open answers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JudgeConfig {
    #[default]
    None,
    Stub {
        score: f64,
    },
    Http {
        url: String,
        #[serde(default = "default_judge_timeout")]
        timeout_ms: u64,
    },
}

fn default_judge_timeout() -> u64 {
    60_000
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            JudgeConfig::Stub { score } if !(0.0..=100.0).contains(score) => {
                Err(format!("stub score {score} outside [0, 100]"))
            }
            JudgeConfig::Http { url, .. } if url.is_empty() => Err("url is empty".into()),
            _ => Ok(()),
        }
    }

    pub fn client(&self) -> Option<Box<dyn JudgeClient>> {
        match self {
            JudgeConfig::None => None,
            JudgeConfig::Stub { score } => Some(Box::new(StubJudge(*score))),
            JudgeConfig::Http { url, timeout_ms } => {
                Some(Box::new(HttpJudge::new(url, Duration::from_millis(*timeout_ms))))
            }
        }
    }
}

/// One judged question.
pub struct JudgeItem<'a> {
    pub question: &'a str,
    pub reference: &'a str,
    pub prediction: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeOutcome {
    pub score: f64,
    pub synthetic: bool,
    pub per_question: Vec<f64>,
}

/// Mean judgment over `items`, or `None` for an empty corpus or when any
/// request fails.
pub fn judge_score(items: &[JudgeItem], client: &dyn JudgeClient) -> Option<JudgeOutcome> {
    if items.is_empty() {
        return None;
    }
    let mut per_question = Vec::with_capacity(items.len());
    for it in items {
        match client.judge(it.question, it.reference, it.prediction) {
            Ok(s) => per_question.push(s),
            Err(e) => {
                log::warn!("judge unavailable, dropping the judge score: {e}");
                return None;
            }
        }
    }
    Some(JudgeOutcome {
        score: per_question.iter().sum::<f64>() / per_question.len() as f64,
        synthetic: client.synthetic(),
        per_question,
    })
}
