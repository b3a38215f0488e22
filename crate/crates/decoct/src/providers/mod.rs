//! Client interfaces for the two external model services (text embedding,
//! chat completion), plus deterministic in-process stubs so every other
//! module is testable offline.
//!
//! Logprobs are natural log (nats); every entropy figure downstream
//! inherits that convention.

mod http;
mod stub;

pub use http::{
    HttpChat, HttpEmbedder, HttpProviderConfig, ENV_API_KEY, ENV_CHAT_URL, ENV_EMBED_URL,
};
pub use stub::{fnv1a, ScriptedChat, StubChat, StubEmbedder};

use crate::error::{ProviderError, Result};
use crate::vector::Vector;

/// Default cap on concurrently in-flight provider calls.
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

/// Message role in a chat request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
    pub want_logprobs: bool,
}

impl ChatRequest {
    /// Single-user-message request at the given temperature.
    pub fn user(content: impl Into<String>, temperature: f64) -> Self {
        ChatRequest {
            messages: vec![ChatMessage {
                role: Role::User,
                content: content.into(),
            }],
            temperature,
            max_output_tokens: None,
            want_logprobs: false,
        }
    }

    pub fn with_logprobs(mut self) -> Self {
        self.want_logprobs = true;
        self
    }

    /// Concatenated message contents, used by stubs to key behavior.
    pub fn joined_content(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub text: String,
    /// Natural-log probabilities of the sampled tokens, present iff the
    /// request asked for them. When `finish_reason` is `Stop`, the final
    /// entry belongs to the terminator token.
    pub token_logprobs: Option<Vec<f64>>,
    pub finish_reason: FinishReason,
}

impl ChatResponse {
    pub fn text_only(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            token_logprobs: None,
            finish_reason: FinishReason::Stop,
        }
    }
}

/// Text-embedding service.
pub trait Embedder: Send + Sync {
    /// Embeds a batch of texts, one unit vector per text, order-preserving.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, ProviderError>;

    /// Identifier recorded in provenance and manifests.
    fn provider_id(&self) -> String;
}

/// Chat-completion service.
pub trait ChatModel: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    fn provider_id(&self) -> String;
}

/// Borrowed bundle handed to the pipeline operations.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub embedder: &'a dyn Embedder,
    pub chat: &'a dyn ChatModel,
    /// In-flight cap for per-entry calls.
    pub max_in_flight: usize,
}

impl<'a> Providers<'a> {
    pub fn new(embedder: &'a dyn Embedder, chat: &'a dyn ChatModel) -> Self {
        Providers {
            embedder,
            chat,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

/// Embeds one text. Convenience over [`Embedder::embed_batch`].
pub fn embed_one(embedder: &dyn Embedder, text: &str) -> Result<Vector, ProviderError> {
    let mut out = embedder.embed_batch(&[text.to_string()])?;
    out.pop()
        .ok_or_else(|| ProviderError::Shape("empty embedding batch response".into()))
}

/// Applies `f` to every item with at most `cap` invocations in flight.
/// Results come back in input order regardless of completion order.
pub(crate) fn bounded_map<T, R, F>(items: Vec<T>, cap: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync,
{
    let cap = cap.max(1);
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let work: Vec<std::sync::Mutex<Option<T>>> = items
        .into_iter()
        .map(|t| std::sync::Mutex::new(Some(t)))
        .collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..n).map(|_| None).collect();
    let results: Vec<std::sync::Mutex<&mut Option<R>>> =
        slots.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..cap.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let item = work[i].lock().unwrap().take().expect("item taken once");
                let r = f(i, item);
                **results[i].lock().unwrap() = Some(r);
            });
        }
    });
    drop(results);
    slots.into_iter().map(|r| r.expect("slot filled")).collect()
}
