//! Text-completion backends: an OpenAI-compatible HTTP client plus
//! deterministic mocks that close the evaluation loop offline.

pub mod http;

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{PreprocessError, Preprocessor, RawCase};
use crate::seed::{derive_indexed, rng};
pub use http::{ChatClient, RetryPolicy};

/// Fixed response of the always-not-found backend; matches no choice title.
pub const NOT_FOUND_RESPONSE: &str = "NO SUCH CASE EXISTS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Oracle,
    UniformRandom,
    AlwaysNotfound,
    Fixed,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Http => "http",
            BackendKind::Oracle => "oracle",
            BackendKind::UniformRandom => "uniform_random",
            BackendKind::AlwaysNotfound => "always_notfound",
            BackendKind::Fixed => "fixed",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Self::Http, Self::Oracle, Self::UniformRandom, Self::AlwaysNotfound, Self::Fixed]
            .into_iter()
            .find(|k| k.name() == name)
    }
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Response of the `fixed` backend.
    #[serde(default)]
    pub fixed_text: Option<String>,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: f64,
}

impl BackendConfig {
    pub fn mock(kind: BackendKind, seed: u64) -> Self {
        Self {
            kind,
            endpoint: None,
            model_name: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            seed: Some(seed),
            fixed_text: None,
            api_key_env: default_key_env(),
            temperature: 0.0,
        }
    }

    pub fn http(endpoint: &str, model: &str) -> Self {
        Self {
            endpoint: Some(endpoint.to_string()),
            model_name: Some(model.to_string()),
            seed: None,
            ..Self::mock(BackendKind::Http, 0)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() => {
                Err(BackendError::Config("http backend requires an endpoint".into()))
            }
            BackendKind::Http => Ok(()),
            _ if self.seed.is_none() => {
                Err(BackendError::Config(format!("{} backend requires a seed", self.kind.name())))
            }
            BackendKind::Fixed if self.fixed_text.is_none() => {
                Err(BackendError::Config("fixed backend requires fixed_text".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("oracle backend needs the instance's expected output")]
    MissingMetadata,
    #[error("uniform_random backend needs at least one option")]
    NoOptions,
    #[error("transport failed after {} attempt(s): {}", attempts.len(), attempts.join("; "))]
    Transport { attempts: Vec<String> },
}

/// A prompt plus the metadata mock backends may consult. The HTTP backend
/// only ever sees `text`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PromptRequest {
    pub text: String,
    pub expected_output: Option<String>,
    /// Titles (or labels) a random answerer picks from.
    pub options: Vec<String>,
}

impl PromptRequest {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub latency: Duration,
    pub backend_kind: String,
}

#[derive(Debug, Clone)]
pub struct Backend {
    config: BackendConfig,
    chat: Option<ChatClient>,
}

impl Backend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let chat = match config.kind {
            BackendKind::Http => {
                let api_key = std::env::var(&config.api_key_env).ok();
                let client = ChatClient::new(
                    config.endpoint.as_deref().unwrap_or_default(),
                    config.model_name.as_deref().unwrap_or("default"),
                    config.temperature,
                    api_key,
                    Duration::from_secs_f64(config.timeout_secs),
                    RetryPolicy {
                        max_retries: config.max_retries,
                        base_backoff: Duration::from_millis(config.backoff_ms),
                    },
                )
                .map_err(BackendError::Config)?;
                Some(client)
            }
            _ => None,
        };
        Ok(Self { config, chat })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Completes one prompt. `index` is the prompt's position in its batch;
    /// mocks derive their randomness from `(seed, index)` only.
    pub fn complete(&self, request: &PromptRequest, index: u64) -> Result<Completion, BackendError> {
        if request.text.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let started = Instant::now();
        let text = match self.config.kind {
            BackendKind::Http => {
                let chat = self.chat.as_ref().expect("http backend has a client");
                chat.complete(&request.text).map_err(|attempts| BackendError::Transport { attempts })?
            }
            BackendKind::Oracle => request.expected_output.clone().ok_or(BackendError::MissingMetadata)?,
            BackendKind::UniformRandom => {
                if request.options.is_empty() {
                    return Err(BackendError::NoOptions);
                }
                let seed = derive_indexed(self.config.seed.unwrap_or_default(), "uniform_random", index);
                let pick = rng(seed).gen_range(0..request.options.len());
                request.options[pick].clone()
            }
            BackendKind::AlwaysNotfound => NOT_FOUND_RESPONSE.to_string(),
            BackendKind::Fixed => self.config.fixed_text.clone().unwrap_or_default(),
        };
        Ok(Completion { text, latency: started.elapsed(), backend_kind: self.config.kind.name().to_string() })
    }

    /// Completes prompts on a pool of `parallelism` workers. Results are in
    /// input order and a failing item never aborts the batch.
    pub fn complete_batch(
        &self,
        requests: &[PromptRequest],
        parallelism: usize,
    ) -> Result<Vec<Result<Completion, BackendError>>, BackendError> {
        if parallelism == 0 {
            return Err(BackendError::Config("parallelism must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(pool.install(|| {
            requests
                .par_iter()
                .enumerate()
                .map(|(i, r)| self.complete(r, i as u64))
                .collect()
        }))
    }
}

/// Drives the preprocessing protocol through a completion backend.
pub struct BackendPreprocessor {
    pub backend: Backend,
}

impl Preprocessor for BackendPreprocessor {
    fn respond(&self, _raw: &RawCase, prompt: &str) -> Result<String, PreprocessError> {
        self.backend
            .complete(&PromptRequest::text(prompt), 0)
            .map(|c| c.text)
            .map_err(|e| PreprocessError::Backend(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(expected: &str, options: &[&str]) -> PromptRequest {
        PromptRequest {
            text: "prompt".into(),
            expected_output: Some(expected.into()),
            options: options.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn config_validation() {
        let mut http = BackendConfig::http("http://x", "m");
        assert!(http.validate().is_ok());
        http.endpoint = None;
        assert!(http.validate().is_err());
        let mut mock = BackendConfig::mock(BackendKind::Oracle, 1);
        assert!(mock.validate().is_ok());
        mock.seed = None;
        assert!(mock.validate().is_err());
        assert!(BackendConfig::mock(BackendKind::Fixed, 1).validate().is_err());
    }

    #[test]
    fn oracle_returns_expected_output() {
        let b = Backend::new(BackendConfig::mock(BackendKind::Oracle, 1)).unwrap();
        let c = b.complete(&request("Robinson v. Campbell.", &[]), 0).unwrap();
        assert_eq!(c.text, "Robinson v. Campbell.");
        assert_eq!(c.backend_kind, "oracle");
        assert_eq!(b.complete(&PromptRequest::text("p"), 0), Err(BackendError::MissingMetadata));
    }

    #[test]
    fn not_found_and_fixed() {
        let b = Backend::new(BackendConfig::mock(BackendKind::AlwaysNotfound, 1)).unwrap();
        assert_eq!(b.complete(&request("x", &[]), 0).unwrap().text, "NO SUCH CASE EXISTS");
        let mut cfg = BackendConfig::mock(BackendKind::Fixed, 1);
        cfg.fixed_text = Some("Settlement".into());
        let b = Backend::new(cfg).unwrap();
        assert_eq!(b.complete(&request("x", &[]), 3).unwrap().text, "Settlement");
        assert_eq!(b.complete(&PromptRequest::text(" "), 0), Err(BackendError::EmptyPrompt));
    }

    #[test]
    fn uniform_random_is_calibrated() {
        let b = Backend::new(BackendConfig::mock(BackendKind::UniformRandom, 11)).unwrap();
        let options: Vec<String> = (0..10).map(|i| format!("choice {i}")).collect();
        let req = PromptRequest { text: "p".into(), expected_output: None, options: options.clone() };
        let mut counts = [0usize; 10];
        for i in 0..10_000 {
            let text = b.complete(&req, i).unwrap().text;
            counts[options.iter().position(|o| *o == text).unwrap()] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.1).abs() <= 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn batch_preserves_order_and_is_parallelism_invariant() {
        let b = Backend::new(BackendConfig::mock(BackendKind::UniformRandom, 5)).unwrap();
        let reqs: Vec<_> = (0..64).map(|_| request("x", &["a", "b", "c", "d"])).collect();
        let texts = |p| -> Vec<String> {
            b.complete_batch(&reqs, p).unwrap().into_iter().map(|r| r.unwrap().text).collect()
        };
        assert_eq!(texts(1), texts(8));

        let oracle = Backend::new(BackendConfig::mock(BackendKind::Oracle, 1)).unwrap();
        let reqs = vec![request("one", &[]), PromptRequest::text("no metadata"), request("three", &[])];
        let out = oracle.complete_batch(&reqs, 2).unwrap();
        assert_eq!(out[0].as_ref().unwrap().text, "one");
        assert_eq!(out[1], Err(BackendError::MissingMetadata));
        assert_eq!(out[2].as_ref().unwrap().text, "three");
        assert!(oracle.complete_batch(&reqs, 0).is_err());
    }
}
