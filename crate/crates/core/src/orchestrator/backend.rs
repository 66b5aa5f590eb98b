//! Transport to a VLM backend.
//!
//! Wire contract: `POST {base_url}/v1/generate` with a JSON body
//! `{prompt, image | image_path, max_new_tokens, temperature, system_id}`.
//! A 200 response carries `{text, model}`; anything else carries `{error}`.

use std::path::PathBuf;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    /// Base64-encoded image bytes, sent instead of `image_path` when configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub system_id: String,
}

impl BackendRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens < 1 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
    #[serde(default)]
    pub model: String,
}

#[derive(Debug, Clone, Deserialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend returned {status}: {message}")]
    Status { status: u16, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("reading image {path}: {message}")]
    Image { path: String, message: String },
}

pub trait Backend: Send + Sync {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).generate(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).generate(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageTransport {
    /// Send the corpus path; the backend resolves it.
    #[default]
    Path,
    /// Read the file and send its bytes base64-encoded.
    Base64,
}

/// Backend reached over HTTP.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    transport: ImageTransport,
    image_root: Option<PathBuf>,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: format!("{}/v1/generate", base_url.trim_end_matches('/')),
            transport: ImageTransport::Path,
            image_root: None,
        }
    }

    /// Send images inline, resolving relative corpus paths against `image_root`.
    pub fn with_image_transport(mut self, transport: ImageTransport, image_root: Option<PathBuf>) -> Self {
        self.transport = transport;
        self.image_root = image_root;
        self
    }

    fn prepare(&self, request: &BackendRequest) -> Result<BackendRequest, BackendError> {
        let mut req = request.clone();
        if self.transport == ImageTransport::Base64 {
            if let Some(path) = req.image_path.take() {
                let full = match &self.image_root {
                    Some(root) => root.join(&path),
                    None => PathBuf::from(&path),
                };
                let bytes = std::fs::read(&full).map_err(|e| BackendError::Image {
                    path: full.display().to_string(),
                    message: e.to_string(),
                })?;
                req.image = Some(base64::engine::general_purpose::STANDARD.encode(bytes));
            }
        }
        Ok(req)
    }
}

impl Backend for HttpBackend {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let body = self.prepare(request)?;
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if status == 200 {
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))
        } else {
            let message = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            Err(BackendError::Status { status, message })
        }
    }
}

/// Final sentence of the question inside a composed prompt.
pub fn final_question_sentence(prompt: &str) -> &str {
    let body = prompt
        .trim()
        .trim_start_matches(crate::prompting::PROMPT_HEAD)
        .trim_end_matches(crate::prompting::PROMPT_TAIL)
        .trim();
    let end = body.len();
    // a sentence starts after the last ". ", "? " or "! " that precedes the end
    let head = &body[..end.saturating_sub(1)];
    let start = [". ", "? ", "! "]
        .iter()
        .filter_map(|sep| head.rfind(sep).map(|i| i + sep.len()))
        .max()
        .unwrap_or(0);
    body[start..].trim()
}

/// Short stable digest of a request.
pub fn request_digest(request: &BackendRequest) -> String {
    let mut h = Sha256::new();
    h.update(request.system_id.as_bytes());
    h.update([0]);
    h.update(request.prompt.as_bytes());
    h.update([0]);
    h.update(request.image_path.as_deref().unwrap_or("").as_bytes());
    h.finalize()
        .iter()
        .take(4)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// In-process deterministic backend: echoes the final question sentence
/// tagged with a request digest.
#[derive(Debug, Clone, Default)]
pub struct MockEchoBackend;

impl Backend for MockEchoBackend {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        Ok(BackendResponse {
            text: format!(
                "{} #{}",
                final_question_sentence(&request.prompt),
                request_digest(request)
            ),
            model: "mock-echo".into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 250,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, failed_attempts: u32) -> Duration {
        let factor = 1u64 << failed_attempts.saturating_sub(1).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// Calls the backend with exponential backoff. Invalid requests are not retried.
pub fn generate_with_retry(
    backend: &dyn Backend,
    request: &BackendRequest,
    policy: &RetryPolicy,
) -> Result<BackendResponse, BackendError> {
    let attempts = policy.attempts.max(1);
    let mut failed = 0;
    loop {
        match backend.generate(request) {
            Ok(r) => return Ok(r),
            Err(e @ BackendError::InvalidRequest(_)) => return Err(e),
            Err(e) => {
                failed += 1;
                if failed >= attempts {
                    return Err(e);
                }
                log::debug!("backend attempt {failed}/{attempts} failed: {e}");
                std::thread::sleep(policy.delay(failed));
            }
        }
    }
}
