//! Blocking JSON-over-HTTP helpers for OpenAI-compatible endpoints.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Retry policy shared by the chat and embedding clients.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff: Duration,
}

fn retryable(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

/// POSTs `body` to `url`, retrying with exponential backoff on transport
/// errors, 429 and 5xx. On failure returns one log line per attempt.
pub fn post_json(
    client: &Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
    policy: &RetryPolicy,
) -> Result<Value, Vec<String>> {
    let mut attempts = Vec::new();
    for attempt in 0..=policy.max_retries {
        if attempt > 0 {
            thread::sleep(policy.base_backoff * 2u32.saturating_pow(attempt - 1));
        }
        let mut request = client.post(url).json(body);
        if let Some(key) = api_key {
            request = request.bearer_auth(key);
        }
        match request.send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp.json::<Value>().map_err(|e| {
                        attempts.push(format!("attempt {}: invalid JSON body: {e}", attempt + 1));
                        attempts.clone()
                    });
                }
                let text = resp.text().unwrap_or_default();
                attempts.push(format!("attempt {}: HTTP {status}: {}", attempt + 1, truncate(&text, 200)));
                if !retryable(status) {
                    break;
                }
            }
            Err(e) => attempts.push(format!("attempt {}: {e}", attempt + 1)),
        }
        tracing::debug!(url, attempt, "request failed, retrying");
    }
    Err(attempts)
}

fn truncate(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

/// Client for `POST {endpoint}/chat/completions`.
#[derive(Debug, Clone)]
pub struct ChatClient {
    client: Client,
    url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    policy: RetryPolicy,
}

impl ChatClient {
    pub fn new(
        endpoint: &str,
        model: &str,
        temperature: f64,
        api_key: Option<String>,
        timeout: Duration,
        policy: RetryPolicy,
    ) -> Result<Self, String> {
        let client = Client::builder().timeout(timeout).build().map_err(|e| e.to_string())?;
        Ok(Self {
            client,
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model: model.to_string(),
            temperature,
            api_key,
            policy,
        })
    }

    /// Sends one user message and returns `choices[0].message.content`.
    pub fn complete(&self, prompt: &str) -> Result<String, Vec<String>> {
        let body = serde_json::to_value(ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage { role: "user".into(), content: prompt.to_string() }],
            temperature: self.temperature,
        })
        .expect("chat request serializes");
        let value = post_json(&self.client, &self.url, self.api_key.as_deref(), &body, &self.policy)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| vec![format!("response lacks choices[0].message.content: {value}")])
    }
}
