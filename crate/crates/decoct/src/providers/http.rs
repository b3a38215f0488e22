//! HTTP JSON clients for the embedding and chat endpoints.
//!
//! Both endpoints follow the de-facto chat-completions / embeddings POST
//! shape; field names are documented in docs/providers.md. Transport
//! failures and 429/5xx responses are retried with exponential backoff.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatModel, ChatRequest, ChatResponse, Embedder, FinishReason};
use crate::error::{ProviderError, Result};
use crate::vector::{normalize, Vector};

/// Environment variables the CLI reads to configure remote providers.
pub const ENV_EMBED_URL: &str = "DECOCT_EMBED_URL";
pub const ENV_CHAT_URL: &str = "DECOCT_CHAT_URL";
pub const ENV_API_KEY: &str = "DECOCT_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpProviderConfig {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Total attempts per call (first try included).
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl HttpProviderConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpProviderConfig {
            url: url.into(),
            model: model.into(),
            api_key: None,
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

fn client(config: &HttpProviderConfig) -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| ProviderError::Transport {
            attempts: 0,
            message: e.to_string(),
        })
}

/// Sends `body` to `config.url`, retrying transport failures and 429/5xx
/// statuses. 4xx statuses other than 429 fail immediately; bodies that
/// mention a context-length rejection map to [`ProviderError::ContextOverflow`].
fn post_with_retry(
    config: &HttpProviderConfig,
    body: &serde_json::Value,
) -> Result<String, ProviderError> {
    let client = client(config)?;
    let attempts = config.attempts.max(1);
    let mut backoff = config.initial_backoff;
    let mut last_error = String::new();
    for attempt in 1..=attempts {
        if attempt > 1 {
            std::thread::sleep(backoff);
            backoff *= 2;
        }
        let mut req = client.post(&config.url).json(body);
        if let Some(key) = &config.api_key {
            req = req.bearer_auth(key);
        }
        match req.send() {
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text().map_err(|e| ProviderError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })?;
                if status.is_success() {
                    return Ok(text);
                }
                if is_context_overflow(status.as_u16(), &text) {
                    return Err(ProviderError::ContextOverflow);
                }
                if status.as_u16() == 429 || status.is_server_error() {
                    last_error = format!("http {status}: {}", truncate(&text, 200));
                    continue;
                }
                return Err(ProviderError::Shape(format!(
                    "http {status}: {}",
                    truncate(&text, 200)
                )));
            }
            Err(e) => {
                last_error = e.to_string();
            }
        }
    }
    Err(ProviderError::Transport {
        attempts,
        message: last_error,
    })
}

fn is_context_overflow(status: u16, body: &str) -> bool {
    status == 413
        || (status == 400
            && (body.contains("context_length") || body.contains("maximum context length")))
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Remote embedding endpoint.
pub struct HttpEmbedder {
    pub config: HttpProviderConfig,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct EmbeddingResponseBody {
    data: Vec<EmbeddingItem>,
}

impl Embedder for HttpEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::Shape("empty embedding batch".into()));
        }
        if let Some(t) = texts.iter().find(|t| t.trim().is_empty()) {
            return Err(ProviderError::Shape(format!(
                "blank text in embedding batch: {t:?}"
            )));
        }
        let body = json!({ "model": self.config.model, "input": texts });
        let raw = post_with_retry(&self.config, &body)?;
        let parsed: EmbeddingResponseBody = serde_json::from_str(&raw)
            .map_err(|e| ProviderError::Shape(format!("embedding response: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(ProviderError::Shape(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut items = parsed.data;
        items.sort_by_key(|i| i.index);
        let dim = items[0].embedding.len();
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            if item.embedding.len() != dim {
                return Err(ProviderError::Shape(format!(
                    "embedding dim mismatch: {} vs {dim}",
                    item.embedding.len()
                )));
            }
            let v = Vector::new(item.embedding)
                .map_err(|e| ProviderError::Shape(format!("embedding values: {e}")))?;
            // the encoder contract does not promise unit norm; normalize here
            let v = normalize(&v)
                .map_err(|_| ProviderError::Shape("all-zero embedding from provider".into()))?;
            out.push(v);
        }
        Ok(out)
    }

    fn provider_id(&self) -> String {
        format!("http-embed({})", self.config.model)
    }
}

/// Remote chat-completion endpoint.
pub struct HttpChat {
    pub config: HttpProviderConfig,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct LogprobEntry {
    logprob: f64,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    content: Vec<LogprobEntry>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
    logprobs: Option<ChoiceLogprobs>,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    choices: Vec<ChatChoice>,
}

impl ChatModel for HttpChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if request.messages.is_empty() {
            return Err(ProviderError::Shape("chat request with no messages".into()));
        }
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "logprobs": request.want_logprobs,
        });
        if let Some(max) = request.max_output_tokens {
            body["max_tokens"] = json!(max);
        }
        let raw = post_with_retry(&self.config, &body)?;
        let parsed: ChatResponseBody = serde_json::from_str(&raw)
            .map_err(|e| ProviderError::Shape(format!("chat response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Shape("chat response with no choices".into()))?;
        let token_logprobs = match (request.want_logprobs, choice.logprobs) {
            (true, Some(lp)) => {
                let vals: Vec<f64> = lp.content.iter().map(|e| e.logprob).collect();
                if vals.iter().any(|v| *v > 0.0 + 1e-9 || !v.is_finite()) {
                    return Err(ProviderError::Shape(
                        "logprob above zero or non-finite".into(),
                    ));
                }
                Some(vals)
            }
            (true, None) => return Err(ProviderError::MissingLogprobs),
            (false, _) => None,
        };
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        Ok(ChatResponse {
            text: choice.message.content,
            token_logprobs,
            finish_reason,
        })
    }

    fn provider_id(&self) -> String {
        format!("http-chat({})", self.config.model)
    }
}
