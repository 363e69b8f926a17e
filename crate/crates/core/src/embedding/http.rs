use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::{json, Value};

use super::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::backend::http::{post_json, RetryPolicy};

/// Embedder backed by an OpenAI-compatible `POST {endpoint}/embeddings`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: Client,
    url: String,
    model: String,
    dim: usize,
    api_key: Option<String>,
    policy: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: &str,
        model: &str,
        dim: usize,
        api_key: Option<String>,
        timeout: Duration,
        policy: RetryPolicy,
    ) -> Result<Self, String> {
        let client = Client::builder().timeout(timeout).build().map_err(|e| e.to_string())?;
        Ok(Self {
            client,
            url: format!("{}/embeddings", endpoint.trim_end_matches('/')),
            model: model.to_string(),
            dim,
            api_key,
            policy,
        })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let body = json!({ "model": self.model, "input": text });
        let value = post_json(&self.client, &self.url, self.api_key.as_deref(), &body, &self.policy)
            .map_err(|attempts| EmbedError::Transport { attempts })?;
        let values: Vec<f64> = value
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Transport {
                attempts: vec![format!("response lacks data[0].embedding: {value}")],
            })?
            .iter()
            .map(|v| v.as_f64().unwrap_or(f64::NAN))
            .collect();
        if values.len() != self.dim {
            return Err(EmbedError::Dimension { expected: self.dim, got: values.len() });
        }
        EmbeddingVector::normalized(values)
    }
}
