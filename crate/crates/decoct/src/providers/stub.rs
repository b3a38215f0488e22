//! Deterministic in-process providers.
//!
//! The stub embedder hashes character n-grams into signed buckets, so the
//! same text and seed always produce the same unit vector and texts that
//! share words land near each other. The stub chat recognizes the prompt
//! family it is answering (lesson, concept, re-rank, sampled generation)
//! from template markers and produces deterministic replies, which makes
//! the full pipeline reproducible offline.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{ChatModel, ChatRequest, ChatResponse, Embedder, FinishReason};
use crate::error::{ProviderError, Result};
use crate::vector::{inner, normalize, Vector};

/// FNV-1a 64-bit hash; fixed constants so values survive process restarts.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn fnv1a_seeded(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = fnv1a(&seed.to_le_bytes());
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seeded feature-hashing embedder over character n-grams (n = 1..=3).
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        StubEmbedder { dim, seed }
    }

    fn embed_text(&self, text: &str) -> Result<Vector, ProviderError> {
        let chars: Vec<char> = text.trim().chars().collect();
        let mut buckets = vec![0.0f64; self.dim];
        let mut gram = String::new();
        for n in 1..=3usize {
            if chars.len() < n {
                break;
            }
            for window in chars.windows(n) {
                gram.clear();
                gram.extend(window.iter());
                let h = fnv1a_seeded(self.seed, gram.as_bytes());
                let bucket = (h % self.dim as u64) as usize;
                let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
                buckets[bucket] += sign;
            }
        }
        let raw = Vector::new(buckets)
            .map_err(|e| ProviderError::Shape(format!("stub embedding: {e}")))?;
        normalize(&raw).map_err(|_| {
            ProviderError::Shape(format!("stub embedding collapsed to zero for {text:?}"))
        })
    }
}

impl Embedder for StubEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::Shape("empty embedding batch".into()));
        }
        if let Some(t) = texts.iter().find(|t| t.trim().is_empty()) {
            return Err(ProviderError::Shape(format!(
                "blank text in embedding batch: {t:?}"
            )));
        }
        texts.iter().map(|t| self.embed_text(t)).collect()
    }

    fn provider_id(&self) -> String {
        format!("stub-embed(dim={},seed={})", self.dim, self.seed)
    }
}

// Template markers the stub chat keys on. These come from the shipped
// prompt assets in `crate::prompts`.
const MARKER_RERANK: &str = "Return ONLY a JSON array of integer indices";
const MARKER_CONCEPT: &str = "Respond with EXACTLY three lines";
const MARKER_CANDIDATES: &str = "## Candidate Experiences:";
const MARKER_GUIDELINES: &str = "## Selection Guidelines:";
const MARKER_QUERY: &str = "## Query Problem:";
const MARKER_FEWSHOT: &str = "# Few-shot Experience:";
const MARKER_TARGET: &str = "# Target Problem Statement:";

/// Deterministic chat stub: same seed and prompt, same reply.
///
/// Sampled generations (`want_logprobs`) draw Bernoulli tokens whose
/// per-token entropy shrinks as the prompt's few-shot examples get closer
/// (in stub-embedding space) to the target problem, mimicking a model made
/// more certain by relevant context.
pub struct StubChat {
    seed: u64,
    embed: StubEmbedder,
    /// Number of non-terminator tokens per sampled generation.
    pub gen_length: usize,
    call_counts: Mutex<HashMap<u64, u64>>,
}

impl StubChat {
    pub fn new(seed: u64) -> Self {
        StubChat {
            seed,
            embed: StubEmbedder::new(64, seed),
            gen_length: 24,
            call_counts: Mutex::new(HashMap::new()),
        }
    }

    fn section<'a>(prompt: &'a str, header: &str) -> Option<&'a str> {
        let start = prompt.find(header)? + header.len();
        let rest = &prompt[start..];
        let end = rest.find("\n#").unwrap_or(rest.len());
        Some(rest[..end].trim())
    }

    fn problem_of(prompt: &str) -> &str {
        for header in [
            "# Problem Statement:",
            "# Shopping Task:",
            "# GitHub Issue:",
            "Problem:",
            "Task Instruction:",
            "Issue:",
        ] {
            if let Some(s) = Self::section(prompt, header) {
                // For concept prompts the lesson section follows without a
                // '#' heading; cut at the first blank line.
                let s = s.split("\n\n").next().unwrap_or(s).trim();
                if !s.is_empty() {
                    return s;
                }
            }
        }
        prompt
    }

    fn lesson_reply(&self, prompt: &str) -> String {
        let problem = Self::problem_of(prompt);
        let slug: String = problem
            .split_whitespace()
            .take(8)
            .collect::<Vec<_>>()
            .join(" ");
        let h = fnv1a_seeded(self.seed, problem.as_bytes());
        format!(
            "1. Task Description: Problems of the form {slug}.\n\
             2. Strategy: Work the structure of {slug} step by step, checking each intermediate result (variant {h:04x}).\n\
             3. Pitfalls: Do not skip the verification pass.",
            h = h & 0xffff
        )
    }

    fn concept_reply(&self, prompt: &str) -> String {
        let problem = Self::problem_of(prompt);
        let words: Vec<&str> = problem.split_whitespace().collect();
        let topic = words.iter().take(2).copied().collect::<Vec<_>>().join(" ");
        let pattern = words.iter().take(10).copied().collect::<Vec<_>>().join(" ");
        let h = fnv1a_seeded(self.seed, problem.as_bytes()) & 0xfff;
        format!(
            "Topic: {topic}\nProblem: {pattern}\nTechnique: structured decomposition {h:03x}"
        )
    }

    /// Maximal-marginal-relevance ordering over the numbered candidates,
    /// judged in stub-embedding space. Stands in for an LLM that prefers
    /// relevant but non-redundant lessons.
    fn rerank_reply(&self, prompt: &str) -> String {
        let query = Self::section(prompt, MARKER_QUERY).unwrap_or("");
        let cand_block = prompt
            .find(MARKER_CANDIDATES)
            .map(|s| &prompt[s + MARKER_CANDIDATES.len()..])
            .unwrap_or("");
        let cand_block = cand_block
            .find(MARKER_GUIDELINES)
            .map(|e| &cand_block[..e])
            .unwrap_or(cand_block);
        let mut candidates: Vec<(usize, &str)> = Vec::new();
        for line in cand_block.lines() {
            let line = line.trim();
            if let Some(dot) = line.find(". ") {
                if let Ok(idx) = line[..dot].parse::<usize>() {
                    candidates.push((idx, line[dot + 2..].trim()));
                }
            }
        }
        if candidates.is_empty() {
            return "[]".to_string();
        }
        let embed_or_zero = |t: &str| self.embed.embed_text(if t.is_empty() { "?" } else { t });
        let qv = match embed_or_zero(query) {
            Ok(v) => v,
            Err(_) => return "[]".to_string(),
        };
        let cvs: Vec<Vector> = match candidates
            .iter()
            .map(|(_, t)| embed_or_zero(t))
            .collect::<Result<_, _>>()
        {
            Ok(v) => v,
            Err(_) => return "[]".to_string(),
        };
        let rel: Vec<f64> = cvs.iter().map(|c| inner(&qv, c).unwrap_or(0.0)).collect();
        let mut remaining: Vec<usize> = (0..candidates.len()).collect();
        let mut order: Vec<usize> = Vec::new();
        while !remaining.is_empty() {
            let mut best = remaining[0];
            let mut best_score = f64::NEG_INFINITY;
            for &i in &remaining {
                let redundancy = order
                    .iter()
                    .map(|&s| inner(&cvs[i], &cvs[s]).unwrap_or(0.0))
                    .fold(f64::NEG_INFINITY, f64::max);
                let redundancy = if redundancy.is_finite() { redundancy } else { 0.0 };
                let score = rel[i] - 0.5 * redundancy;
                if score > best_score + 1e-12 {
                    best_score = score;
                    best = i;
                }
            }
            order.push(best);
            remaining.retain(|&i| i != best);
        }
        let picks: Vec<String> = order
            .into_iter()
            .map(|i| candidates[i].0.to_string())
            .collect();
        format!("[{}]", picks.join(", "))
    }

    /// Per-token certainty rises with the similarity between the few-shot
    /// examples and the target problem.
    fn context_relevance(&self, prompt: &str) -> f64 {
        let target = match Self::section(prompt, MARKER_TARGET) {
            Some(t) if !t.is_empty() => t,
            _ => return 0.0,
        };
        let fewshot = match Self::section(prompt, MARKER_FEWSHOT) {
            Some(f) if !f.is_empty() => f,
            _ => return 0.0,
        };
        let mut problems: Vec<&str> = Vec::new();
        let mut lines = fewshot.lines().peekable();
        while let Some(line) = lines.next() {
            if line.trim() == "Problem:" {
                if let Some(p) = lines.peek() {
                    problems.push(p.trim());
                }
            }
        }
        if problems.is_empty() {
            return 0.0;
        }
        let tv = match self.embed.embed_text(target) {
            Ok(v) => v,
            Err(_) => return 0.0,
        };
        let mut total = 0.0;
        for p in &problems {
            if let Ok(pv) = self.embed.embed_text(p) {
                total += inner(&tv, &pv).unwrap_or(0.0);
            }
        }
        (total / problems.len() as f64).clamp(0.0, 1.0)
    }

    fn sampled_reply(&self, prompt: &str) -> ChatResponse {
        let key = fnv1a(prompt.as_bytes());
        let call_index = {
            let mut counts = self.call_counts.lock().unwrap();
            let c = counts.entry(key).or_insert(0);
            let v = *c;
            *c += 1;
            v
        };
        let rel = self.context_relevance(prompt);
        let p = 0.5 + 0.49 * rel;
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ key.rotate_left(17) ^ call_index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut tokens = Vec::with_capacity(self.gen_length);
        let mut logprobs = Vec::with_capacity(self.gen_length + 1);
        for _ in 0..self.gen_length {
            if rng.random::<f64>() < p {
                tokens.push("a");
                logprobs.push(p.ln());
            } else {
                tokens.push("b");
                logprobs.push((1.0 - p).ln());
            }
        }
        // deterministic terminator
        logprobs.push(0.0);
        ChatResponse {
            text: tokens.join(" "),
            token_logprobs: Some(logprobs),
            finish_reason: FinishReason::Stop,
        }
    }
}

impl ChatModel for StubChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let prompt = request.joined_content();
        if request.want_logprobs {
            return Ok(self.sampled_reply(&prompt));
        }
        let text = if prompt.contains(MARKER_RERANK) {
            self.rerank_reply(&prompt)
        } else if prompt.contains(MARKER_CONCEPT) {
            self.concept_reply(&prompt)
        } else {
            self.lesson_reply(&prompt)
        };
        Ok(ChatResponse::text_only(text))
    }

    fn provider_id(&self) -> String {
        format!("stub-chat(seed={})", self.seed)
    }
}

/// Chat stub that replays a fixed response sequence; for unit tests.
pub struct ScriptedChat {
    responses: Mutex<std::collections::VecDeque<Result<ChatResponse, ProviderError>>>,
    /// Requests received, in call order.
    pub calls: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    pub fn new(responses: Vec<Result<ChatResponse, ProviderError>>) -> Self {
        ScriptedChat {
            responses: Mutex::new(responses.into()),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn of_texts(texts: &[&str]) -> Self {
        Self::new(
            texts
                .iter()
                .map(|t| Ok(ChatResponse::text_only(*t)))
                .collect(),
        )
    }
}

impl ChatModel for ScriptedChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.calls.lock().unwrap().push(request.clone());
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Shape("script exhausted".into())))
    }

    fn provider_id(&self) -> String {
        "scripted-chat".into()
    }
}
