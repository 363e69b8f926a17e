//! Engine configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, BackendKind};
use crate::dataset::{LjpMode, SplitConfig, DEFAULT_CHOICES, DEFAULT_TOKEN_BUDGET, MAX_CHOICES, MIN_BUDGET, MIN_CHOICES};
use crate::embedding::DEFAULT_DIM;
use crate::eval::SweepConfig;
use crate::seed::sha256_hex;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    /// Hashed bag-of-words with idf from the corpus.
    #[default]
    Fallback,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Fallback,
            endpoint: None,
            model_name: None,
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    /// Leading sentences as summary, verdict from the record's sidecar field.
    #[default]
    Extractive,
    /// Send the preprocessing prompt to the configured backend.
    Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub mode: PreprocessMode,
    pub sentences: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { mode: PreprocessMode::Extractive, sentences: 4 }
    }
}

fn default_backend() -> BackendConfig {
    BackendConfig::mock(BackendKind::Oracle, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub corpus_path: PathBuf,
    pub output_dir: PathBuf,
    /// Master seed; every other seed is derived from it unless set explicitly.
    pub seed: u64,
    pub embedder: EmbedderConfig,
    pub embed_dim: usize,
    pub backend: BackendConfig,
    pub choices: usize,
    pub token_budget: usize,
    pub split: SplitConfig,
    pub preprocess: PreprocessConfig,
    pub ljp_mode: LjpMode,
    pub sweep: SweepConfig,
    pub jobs: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            corpus_path: PathBuf::from("corpus.jsonl"),
            output_dir: PathBuf::from("out"),
            seed: 0,
            embedder: EmbedderConfig::default(),
            embed_dim: DEFAULT_DIM,
            backend: default_backend(),
            choices: DEFAULT_CHOICES,
            token_budget: DEFAULT_TOKEN_BUDGET,
            split: SplitConfig::default(),
            preprocess: PreprocessConfig::default(),
            ljp_mode: LjpMode::FewShot,
            sweep: SweepConfig::default(),
            jobs: 1,
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let config: EngineConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), source: Box::new(e) })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.to_path_buf(), source: e })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(MIN_CHOICES..=MAX_CHOICES).contains(&self.choices) {
            return bad(format!("choices must lie in {MIN_CHOICES}..={MAX_CHOICES}, got {}", self.choices));
        }
        if self.token_budget < MIN_BUDGET {
            return bad(format!("token_budget must be at least {MIN_BUDGET}, got {}", self.token_budget));
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if self.preprocess.sentences == 0 {
            return bad("preprocess.sentences must be at least 1".into());
        }
        if self.embedder.kind == EmbedderKind::Http && self.embedder.endpoint.is_none() {
            return bad("http embedder requires an endpoint".into());
        }
        if let Some(size) = self.sweep.sizes.iter().find(|s| !(MIN_CHOICES..=MAX_CHOICES).contains(*s)) {
            return bad(format!("sweep size {size} outside {MIN_CHOICES}..={MAX_CHOICES}"));
        }
        self.backend.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, recorded in every manifest.
    /// `jobs` is left out because it never changes an output.
    pub fn hash(&self) -> String {
        let canonical = EngineConfig { jobs: 1, ..self.clone() };
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serialises"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
