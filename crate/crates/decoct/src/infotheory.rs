//! Monte-Carlo conditional-entropy estimation, information gain, and an
//! executable check of the context-efficiency bound E[τ] <= H/h on
//! controllable synthetic generators.
//!
//! Everything is in nats. Samples are drawn at temperature 1.0 so the
//! sampling distribution matches the modeled distribution; mean
//! sequence-level NLL is then the standard unbiased estimator of the
//! conditional entropy.

use std::sync::Mutex;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ProviderError, Result};
use crate::metrics::pearson;
use crate::model::RetrievedContext;
use crate::providers::{ChatModel, ChatRequest, ChatResponse, FinishReason};

/// Monte-Carlo conditional-entropy figure for one (query, context) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    /// Mean per-sample negative log-likelihood, nats.
    pub value: f64,
    pub num_samples: usize,
    pub per_sample_nll: Vec<f64>,
    /// Mean count of non-terminator tokens per sample.
    pub mean_length: f64,
}

/// Draws `m` samples of the model's output for the query (optionally under
/// the given context) and averages the sequence NLLs.
pub fn estimate_entropy(
    query: &str,
    context: Option<&RetrievedContext>,
    m: usize,
    chat: &dyn ChatModel,
) -> Result<EntropyEstimate> {
    if m < 1 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    let prompt = context.map_or(query, |c| c.prompt_text.as_str());
    let mut per_sample_nll = Vec::with_capacity(m);
    let mut total_length = 0.0;
    for _ in 0..m {
        let request = ChatRequest::user(prompt, 1.0).with_logprobs();
        let response = chat.chat(&request)?;
        let logprobs = response
            .token_logprobs
            .as_ref()
            .ok_or(ProviderError::MissingLogprobs)?;
        per_sample_nll.push(-logprobs.iter().sum::<f64>());
        let generated = match response.finish_reason {
            FinishReason::Stop => logprobs.len().saturating_sub(1),
            FinishReason::Length => logprobs.len(),
        };
        total_length += generated as f64;
    }
    let value = per_sample_nll.iter().sum::<f64>() / m as f64;
    Ok(EntropyEstimate {
        value,
        num_samples: m,
        per_sample_nll,
        mean_length: total_length / m as f64,
    })
}

/// Î(Y; C=c | X=x) = Ĥ(Y | x) − Ĥ(Y | x, c). Negative values mean the
/// context raised output uncertainty.
pub fn information_gain(h_base: &EntropyEstimate, h_context: &EntropyEstimate) -> f64 {
    h_base.value - h_context.value
}

/// Pearson correlation between entropy estimates and their mean generated
/// lengths.
pub fn entropy_length_correlation(estimates: &[EntropyEstimate]) -> Result<f64> {
    let values: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let lengths: Vec<f64> = estimates.iter().map(|e| e.mean_length).collect();
    pearson(&values, &lengths)
}

/// Synthetic token-sequence generators with entropy known by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Generator {
    /// At each step: stop with probability `stop_prob`, otherwise emit one
    /// of `alphabet` symbols uniformly.
    Geometric { stop_prob: f64, alphabet: usize },
    /// Exactly `length` uniform symbols, then a deterministic terminator.
    FixedLength { length: usize, alphabet: usize },
    /// One biased binary token, then a deterministic terminator.
    Bernoulli { p: f64 },
}

impl Generator {
    /// Per-token conditional entropy of the non-terminator tokens, nats.
    /// This is the largest admissible `h` for the efficiency bound.
    pub fn per_token_entropy(&self) -> f64 {
        match *self {
            Generator::Geometric { alphabet, .. } => (alphabet as f64).ln(),
            Generator::FixedLength { alphabet, .. } => (alphabet as f64).ln(),
            Generator::Bernoulli { p } => {
                let q = 1.0 - p;
                let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
                term(p) + term(q)
            }
        }
    }

    /// Exact sequence entropy H(Y), nats.
    pub fn true_entropy(&self) -> f64 {
        match *self {
            Generator::Geometric {
                stop_prob,
                alphabet,
            } => {
                let expected_tau = (1.0 - stop_prob) / stop_prob;
                expected_tau * ((alphabet as f64).ln() - (1.0 - stop_prob).ln())
                    - stop_prob.ln()
            }
            Generator::FixedLength { length, alphabet } => {
                length as f64 * (alphabet as f64).ln()
            }
            Generator::Bernoulli { .. } => self.per_token_entropy(),
        }
    }

    /// Exact E[τ].
    pub fn expected_tau(&self) -> f64 {
        match *self {
            Generator::Geometric { stop_prob, .. } => (1.0 - stop_prob) / stop_prob,
            Generator::FixedLength { length, .. } => length as f64,
            Generator::Bernoulli { .. } => 1.0,
        }
    }

    /// One draw: tokens with their logprobs, terminator last.
    fn sample(&self, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<f64>) {
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        match *self {
            Generator::Geometric {
                stop_prob,
                alphabet,
            } => loop {
                if rng.random::<f64>() < stop_prob {
                    logprobs.push(stop_prob.ln());
                    break;
                }
                let sym = rng.random_range(0..alphabet);
                tokens.push(format!("s{sym}"));
                logprobs.push(((1.0 - stop_prob) / alphabet as f64).ln());
            },
            Generator::FixedLength { length, alphabet } => {
                for _ in 0..length {
                    let sym = rng.random_range(0..alphabet);
                    tokens.push(format!("s{sym}"));
                    logprobs.push(-(alphabet as f64).ln());
                }
                logprobs.push(0.0);
            }
            Generator::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    tokens.push("1".into());
                    logprobs.push(p.ln());
                } else {
                    tokens.push("0".into());
                    logprobs.push((1.0 - p).ln());
                }
                logprobs.push(0.0);
            }
        }
        (tokens, logprobs)
    }
}

/// Adapts a [`Generator`] to the chat interface so the same estimator runs
/// over synthetic processes and real providers.
pub struct GeneratorChat {
    pub generator: Generator,
    rng: Mutex<ChaCha8Rng>,
}

impl GeneratorChat {
    pub fn new(generator: Generator, seed: u64) -> Self {
        GeneratorChat {
            generator,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl ChatModel for GeneratorChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let (tokens, logprobs) = {
            let mut rng = self.rng.lock().unwrap();
            self.generator.sample(&mut rng)
        };
        Ok(ChatResponse {
            text: tokens.join(" "),
            token_logprobs: request.want_logprobs.then_some(logprobs),
            finish_reason: FinishReason::Stop,
        })
    }

    fn provider_id(&self) -> String {
        format!("generator-chat({:?})", self.generator)
    }
}

/// Empirical check of the efficiency bound E[τ] <= H(Y|x,c) / h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub expected_tau: f64,
    /// Estimated H(Y | x, c), nats.
    pub entropy: f64,
    /// Assumed per-token entropy lower bound, nats per token.
    pub h: f64,
    pub bound: f64,
    /// Three standard errors combining the τ and entropy estimates.
    pub slack: f64,
    pub satisfied: bool,
    /// False when `h` exceeds the generator's true per-token entropy, in
    /// which case the bound's precondition does not hold.
    pub h_admissible: bool,
    pub num_samples: usize,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimates E[τ] and H over `m` draws of the generator and reports
/// whether the bound holds within three standard errors.
pub fn check_efficiency_bound(
    generator: &Generator,
    m: usize,
    h: f64,
    seed: u64,
) -> Result<BoundReport> {
    if h <= 0.0 {
        return Err(Error::InvalidH(h));
    }
    if m < 1 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    let h_admissible = h <= generator.per_token_entropy() + 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taus = Vec::with_capacity(m);
    let mut nlls = Vec::with_capacity(m);
    for _ in 0..m {
        let (tokens, logprobs) = generator.sample(&mut rng);
        taus.push(tokens.len() as f64);
        nlls.push(-logprobs.iter().sum::<f64>());
    }
    let (expected_tau, se_tau) = mean_and_se(&taus);
    let (entropy, se_h) = mean_and_se(&nlls);
    let bound = entropy / h;
    let slack = 3.0 * (se_tau.powi(2) + (se_h / h).powi(2)).sqrt();
    // the equality case has zero sampling variance; leave room for
    // floating-point accumulation on top of the statistical slack
    let eps = 1e-9 * bound.abs().max(1.0);
    Ok(BoundReport {
        expected_tau,
        entropy,
        h,
        bound,
        slack,
        satisfied: expected_tau <= bound + slack + eps,
        h_admissible,
        num_samples: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::ScriptedChat;

    fn logprob_response(logprobs: &[f64]) -> ChatResponse {
        ChatResponse {
            text: "x".repeat(logprobs.len()),
            token_logprobs: Some(logprobs.to_vec()),
            finish_reason: FinishReason::Stop,
        }
    }

    #[test]
    fn estimate_is_mean_of_sample_nlls() {
        let chat = ScriptedChat::new(vec![
            Ok(logprob_response(&[-2.0])),
            Ok(logprob_response(&[-4.0])),
        ]);
        let est = estimate_entropy("q", None, 2, &chat).unwrap();
        assert_eq!(est.value, 3.0);
        assert_eq!(est.per_sample_nll, vec![2.0, 4.0]);
        assert_eq!(est.num_samples, 2);
        // estimator samples at temperature 1.0
        assert_eq!(chat.calls.lock().unwrap()[0].temperature, 1.0);
    }

    #[test]
    fn deterministic_generator_has_zero_entropy() {
        let chat = ScriptedChat::new(vec![Ok(logprob_response(&[0.0, 0.0, 0.0]))]);
        let est = estimate_entropy("q", None, 1, &chat).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.mean_length, 2.0); // terminator excluded
    }

    #[test]
    fn missing_logprobs_is_an_error() {
        let chat = ScriptedChat::of_texts(&["no logprobs here"]);
        let err = estimate_entropy("q", None, 1, &chat).unwrap_err();
        assert!(matches!(
            err,
            Error::Provider(ProviderError::MissingLogprobs)
        ));
    }

    #[test]
    fn uniform_two_token_generator_calibrates() {
        let generator = Generator::FixedLength {
            length: 10,
            alphabet: 2,
        };
        let chat = GeneratorChat::new(generator, 7);
        let est = estimate_entropy("q", None, 200, &chat).unwrap();
        let expect = 10.0 * std::f64::consts::LN_2;
        // every sample's NLL is exactly 10 ln 2, so the estimate is exact
        assert!((est.value - expect).abs() < 1e-9);
        assert_eq!(est.mean_length, 10.0);
    }

    #[test]
    fn estimator_is_unbiased_on_two_outcome_generator() {
        let generator = Generator::Bernoulli { p: 0.25 };
        let h = generator.true_entropy();
        // analytic per-sample NLL variance
        let (p, q) = (0.25f64, 0.75f64);
        let var = p * p.ln().powi(2) + q * q.ln().powi(2) - h * h;
        let trials = 10_000;
        let chat = GeneratorChat::new(generator, 99);
        let mut grand = 0.0;
        for _ in 0..trials {
            grand += estimate_entropy("q", None, 1, &chat).unwrap().value;
        }
        grand /= trials as f64;
        let limit = 3.0 * (var / trials as f64).sqrt();
        assert!(
            (grand - h).abs() <= limit,
            "grand mean {grand} vs H {h}, limit {limit}"
        );
    }

    #[test]
    fn gain_is_antisymmetric() {
        let a = EntropyEstimate {
            value: 5.0,
            num_samples: 1,
            per_sample_nll: vec![5.0],
            mean_length: 3.0,
        };
        let b = EntropyEstimate {
            value: 3.0,
            num_samples: 1,
            per_sample_nll: vec![3.0],
            mean_length: 2.0,
        };
        assert_eq!(information_gain(&a, &b), 2.0);
        assert_eq!(information_gain(&b, &a), -2.0);
        assert_eq!(information_gain(&a, &a), 0.0);
    }

    #[test]
    fn geometric_generator_satisfies_bound() {
        let generator = Generator::Geometric {
            stop_prob: 0.5,
            alphabet: 4,
        };
        let h = 4.0f64.ln();
        let report = check_efficiency_bound(&generator, 2000, h, 5).unwrap();
        assert!(report.h_admissible);
        assert!(report.satisfied);
        // analytic E[tau] = 1, H = ln 16, bound = 2
        assert!((report.expected_tau - 1.0).abs() < 0.2);
        assert!((report.bound - 2.0).abs() < 0.2);
    }

    #[test]
    fn fixed_length_generator_is_tight() {
        let generator = Generator::FixedLength {
            length: 10,
            alphabet: 2,
        };
        let h = std::f64::consts::LN_2;
        let report = check_efficiency_bound(&generator, 1000, h, 5).unwrap();
        assert!(report.satisfied);
        let ratio = report.expected_tau * h / report.entropy;
        assert!(ratio >= 0.95 && ratio <= 1.0 + 1e-9, "ratio {ratio}");
    }

    #[test]
    fn inadmissible_h_is_flagged() {
        let generator = Generator::FixedLength {
            length: 10,
            alphabet: 2,
        };
        let report =
            check_efficiency_bound(&generator, 100, 10.0 * std::f64::consts::LN_2, 1).unwrap();
        assert!(!report.h_admissible);
        assert!(matches!(
            check_efficiency_bound(&generator, 10, 0.0, 1),
            Err(Error::InvalidH(_))
        ));
    }

    #[test]
    fn entropy_tracks_length_across_generator_family() {
        let chat_family: Vec<EntropyEstimate> = (1..=10)
            .map(|i| {
                let generator = Generator::FixedLength {
                    length: 5 * i,
                    alphabet: 2,
                };
                let chat = GeneratorChat::new(generator, i as u64);
                estimate_entropy("q", None, 30, &chat).unwrap()
            })
            .collect();
        let r = entropy_length_correlation(&chat_family).unwrap();
        assert!(r > 0.99, "r = {r}");
    }

    #[test]
    fn constant_length_family_degenerates() {
        let ests: Vec<EntropyEstimate> = [2usize, 4, 8]
            .iter()
            .map(|&a| {
                let chat = GeneratorChat::new(
                    Generator::FixedLength {
                        length: 10,
                        alphabet: a,
                    },
                    3,
                );
                estimate_entropy("q", None, 10, &chat).unwrap()
            })
            .collect();
        assert!(matches!(
            entropy_length_correlation(&ests),
            Err(Error::DegenerateVariance)
        ));
    }
}
