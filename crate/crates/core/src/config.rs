//! Pipeline configuration, read from a TOML file.
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{QuestionKind, Split};
use crate::depth::DepthConfig;
use crate::fusion::FusionPolicy;
use crate::metrics::MetricsConfig;
use crate::orchestrator::{
    Backend, HttpBackend, ImageTransport, InferenceConfig, MockEchoBackend, RetryPolicy,
};
use crate::prompting::{CotMode, PromptConfig};

/// A configuration problem, located by its dotted field path.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl ToString) -> Self {
        Self {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub split: Split,
    /// Root that relative image paths in the corpus are resolved against.
    pub images: Option<PathBuf>,
    pub depth_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            split: Split::Validation,
            images: None,
            depth_dir: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    /// Deterministic in-process echo; needs no service.
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: String,
    pub timeout_ms: u64,
    /// Total attempts per request, including the first.
    pub retries: u32,
    pub retry_base_delay_ms: u64,
    pub concurrency: usize,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub image_transport: ImageTransport,
    pub system_id: String,
    pub stage1: bool,
    pub max_error_fraction: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let inference = InferenceConfig::default();
        Self {
            kind: BackendKind::Mock,
            base_url: "http://127.0.0.1:8000".into(),
            timeout_ms: 120_000,
            retries: inference.retry.attempts,
            retry_base_delay_ms: inference.retry.base_delay_ms,
            concurrency: inference.concurrency,
            max_new_tokens: inference.max_new_tokens,
            temperature: inference.temperature,
            image_transport: ImageTransport::Path,
            system_id: inference.system_id,
            stage1: inference.stage1,
            max_error_fraction: inference.max_error_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub backend: BackendConfig,
    pub depth: DepthConfig,
    pub prompt: PromptConfig,
    pub fusion: FusionPolicy,
    pub metrics: MetricsConfig,
    /// Forced question kinds, by question id.
    pub kind_overrides: BTreeMap<String, QuestionKind>,
}

fn check(ok: bool, field: &str, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(field, message))
    }
}

impl PipelineConfig {
    /// Parses and validates a config file, resolving relative paths and
    /// reading the few-shot file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e))?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e: toml::de::Error| {
            // toml reports the offending key only in its message
            let field = e
                .message()
                .split('`')
                .nth(1)
                .filter(|_| e.message().contains("unknown field"))
                .unwrap_or("config")
                .to_string();
            ConfigError::new(field, e.message().trim())
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.paths.dataset.as_mut().map(fix);
        self.paths.images.as_mut().map(fix);
        self.paths.depth_dir.as_mut().map(fix);
        fix(&mut self.paths.output_dir);
        self.prompt.few_shot_file.as_mut().map(fix);
    }

    /// Checks ranges, cross-field rules and that referenced inputs exist.
    /// Loads the few-shot file.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        if let Some(d) = &self.paths.dataset {
            check(d.is_file(), "paths.dataset", &format!("{} is not a file", d.display()))?;
        }
        if let Some(d) = &self.paths.depth_dir {
            check(d.is_dir(), "paths.depth_dir", &format!("{} is not a directory", d.display()))?;
        }
        if let Some(d) = &self.paths.images {
            check(d.is_dir(), "paths.images", &format!("{} is not a directory", d.display()))?;
        }

        let b = &self.backend;
        if b.kind == BackendKind::Http {
            check(
                b.base_url.starts_with("http://") || b.base_url.starts_with("https://"),
                "backend.base_url",
                "must start with http:// or https://",
            )?;
        }
        check(b.timeout_ms > 0, "backend.timeout_ms", "must be > 0")?;
        check(b.retries >= 1, "backend.retries", "must be >= 1")?;
        check(b.concurrency >= 1, "backend.concurrency", "must be >= 1")?;
        check(b.max_new_tokens >= 1, "backend.max_new_tokens", "must be >= 1")?;
        check(b.temperature >= 0.0, "backend.temperature", "must be >= 0")?;
        check(
            (0.0..=1.0).contains(&b.max_error_fraction),
            "backend.max_error_fraction",
            "must be within [0, 1]",
        )?;
        check(!b.system_id.is_empty(), "backend.system_id", "must not be empty")?;

        self.depth.validate().map_err(|e| ConfigError::new("depth", e))?;
        check(
            self.depth.image_width > 0.0 && self.depth.image_height > 0.0,
            "depth.image_width",
            "image size must be positive",
        )?;

        match (&self.prompt.few_shot_file, self.prompt.cot_mode) {
            (Some(p), _) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::new("prompt.few_shot_file", format!("{}: {e}", p.display())))?;
                self.prompt.few_shot_text = Some(text.trim().to_string());
            }
            (None, CotMode::FewShot) => {
                return Err(ConfigError::new("prompt.few_shot_file", "required when cot_mode = \"few_shot\""))
            }
            _ => {}
        }

        for kind in QuestionKind::ALL {
            check(
                self.fusion.routing.contains_key(&kind),
                &format!("fusion.routing.{kind}"),
                "every question kind must be routed",
            )?;
        }
        self.metrics.validate().map_err(|e| {
            let field = match e {
                crate::metrics::MetricsError::Weights(_) => "metrics.weights",
                _ => "metrics",
            };
            ConfigError::new(field, e)
        })?;
        Ok(())
    }

    pub fn dataset(&self) -> Result<&Path, ConfigError> {
        self.paths
            .dataset
            .as_deref()
            .ok_or_else(|| ConfigError::new("paths.dataset", "required by this command"))
    }

    pub fn depth_dir(&self) -> Result<&Path, ConfigError> {
        self.paths
            .depth_dir
            .as_deref()
            .ok_or_else(|| ConfigError::new("paths.depth_dir", "required by this command"))
    }

    pub fn inference(&self) -> InferenceConfig {
        let b = &self.backend;
        InferenceConfig {
            system_id: b.system_id.clone(),
            max_new_tokens: b.max_new_tokens,
            temperature: b.temperature,
            concurrency: b.concurrency,
            retry: RetryPolicy {
                attempts: b.retries,
                base_delay_ms: b.retry_base_delay_ms,
                ..RetryPolicy::default()
            },
            max_error_fraction: b.max_error_fraction,
            stage1: b.stage1,
            prompt: self.prompt.clone(),
        }
    }

    pub fn backend(&self) -> Box<dyn Backend> {
        match self.backend.kind {
            BackendKind::Mock => Box::new(MockEchoBackend),
            BackendKind::Http => Box::new(
                HttpBackend::new(&self.backend.base_url, Duration::from_millis(self.backend.timeout_ms))
                    .with_image_transport(self.backend.image_transport, self.paths.images.clone()),
            ),
        }
    }

    /// JSON form embedded in output artifacts.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or_default()
    }
}
