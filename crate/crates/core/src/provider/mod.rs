//! Completion and embedding provider abstractions.
//!
//! Live providers speak the OpenAI-compatible HTTP API. Offline runs use the
//! deterministic [`HashEmbedder`], the [`ScriptedCompletion`] test double, or
//! the record/replay [`TranscriptStore`] which persists every completion keyed
//! by `(stage, config hash, input hash)`.

mod cache;
mod hash;
mod openai;
mod scripted;
mod transcript;

use std::thread;
use std::time::Duration;

pub use cache::CachedEmbedder;
pub use hash::HashEmbedder;
pub use openai::{OpenAiCompletion, OpenAiEmbedding};
pub use scripted::{ScriptEntry, ScriptedCompletion};
pub use transcript::{RecordedCompletion, TranscriptEntry, TranscriptMode, TranscriptStore};

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    #[error("provider request failed: {0}")]
    Request(String),

    #[error("malformed provider response: {0}")]
    Malformed(String),

    #[error("replay miss: no recorded {stage} response for input {input_hash}")]
    ReplayMiss { stage: String, input_hash: String },

    #[error("no scripted response matches the prompt (starts with {0:?})")]
    NoScript(String),

    #[error("transcript store error: {0}")]
    Store(String),
}

impl ProviderError {
    /// Deterministic failures are never retried.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Request(_))
    }
}

pub trait CompletionProvider: Send + Sync {
    /// Identifies provider and model; part of cache keys.
    fn model_tag(&self) -> String;

    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    /// Identifies provider, model and dimension; persisted indexes must match it.
    fn provider_tag(&self) -> String;

    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

impl<T: CompletionProvider + ?Sized> CompletionProvider for &T {
    fn model_tag(&self) -> String {
        (**self).model_tag()
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        (**self).complete(prompt)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for &T {
    fn provider_tag(&self) -> String {
        (**self).provider_tag()
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        (**self).embed(text)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff(attempts: u32) -> Self {
        Self {
            attempts,
            backoff: Duration::ZERO,
        }
    }

    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let attempts = self.attempts.max(1);
        let mut delay = self.backoff;
        for attempt in 1..=attempts {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if attempt < attempts && e.is_retryable() => {
                    log::warn!("attempt {attempt}/{attempts} failed: {e}");
                    if !delay.is_zero() {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        unreachable!("retry loop always returns")
    }
}

/// Wraps a completion provider with a retry policy.
pub struct RetryingCompletion<P> {
    inner: P,
    policy: RetryPolicy,
}

impl<P> RetryingCompletion<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

impl<P: CompletionProvider> CompletionProvider for RetryingCompletion<P> {
    fn model_tag(&self) -> String {
        self.inner.model_tag()
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.policy.run(|| self.inner.complete(prompt))
    }
}

/// Wraps an embedding provider with a retry policy.
pub struct RetryingEmbedding<P> {
    inner: P,
    policy: RetryPolicy,
}

impl<P> RetryingEmbedding<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for RetryingEmbedding<P> {
    fn provider_tag(&self) -> String {
        self.inner.provider_tag()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.policy.run(|| self.inner.embed(text))
    }
}

pub(crate) fn sha256_hex(parts: &[&[u8]]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}
