use std::sync::Arc;
use std::time::Duration;

use super::config::{CompletionBackend, EmbeddingBackend, PipelineConfig, Stage};
use crate::error::{Error, Result};
use crate::provider::{
    CompletionProvider, EmbeddingProvider, HashEmbedder, OpenAiCompletion, OpenAiEmbedding, ProviderError,
    RetryPolicy, RetryingCompletion, RetryingEmbedding, ScriptedCompletion, TranscriptMode, TranscriptStore,
};

pub const API_KEY_VAR: &str = "OPENAI_API_KEY";

/// Stands in for a live model in replay mode, where every call must be
/// served from the transcript store.
pub struct UnavailableCompletion {
    tag: String,
}

impl UnavailableCompletion {
    pub fn new(tag: impl Into<String>) -> Self {
        Self { tag: tag.into() }
    }
}

impl CompletionProvider for UnavailableCompletion {
    fn model_tag(&self) -> String {
        self.tag.clone()
    }

    fn complete(&self, _prompt: &str) -> std::result::Result<String, ProviderError> {
        Err(ProviderError::Request("no live completion provider configured".into()))
    }
}

/// Embedding provider whose calls pass through the transcript store, so
/// question embeddings replay offline like completions.
pub struct RecordedEmbedding<'a> {
    inner: &'a dyn EmbeddingProvider,
    store: &'a TranscriptStore,
    config_hash: String,
}

impl<'a> RecordedEmbedding<'a> {
    pub fn new(inner: &'a dyn EmbeddingProvider, store: &'a TranscriptStore, config_hash: impl Into<String>) -> Self {
        Self { inner, store, config_hash: config_hash.into() }
    }
}

impl EmbeddingProvider for RecordedEmbedding<'_> {
    fn provider_tag(&self) -> String {
        self.inner.provider_tag()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> std::result::Result<Vec<f64>, ProviderError> {
        let raw = self.store.call(Stage::Embed.as_str(), &self.config_hash, text, || {
            let v = self.inner.embed(text)?;
            serde_json::to_string(&v).map_err(|e| ProviderError::Malformed(e.to_string()))
        })?;
        serde_json::from_str(&raw).map_err(|e| ProviderError::Malformed(format!("recorded embedding: {e}")))
    }
}

fn api_key() -> Result<String> {
    std::env::var(API_KEY_VAR)
        .map_err(|_| Error::Config(format!("{API_KEY_VAR} must be set for the openai provider")))
}

/// Builds the completion provider named by the configuration. Replay mode
/// never needs a live model.
pub fn completion_from_config(cfg: &PipelineConfig) -> Result<Arc<dyn CompletionProvider>> {
    let s = &cfg.completion;
    let policy = RetryPolicy { attempts: s.retries.max(1), backoff: Duration::from_millis(s.backoff_ms) };
    match s.provider {
        CompletionBackend::Scripted => {
            let path = s
                .script
                .as_deref()
                .ok_or_else(|| Error::Config("the scripted provider needs completion.script".into()))?;
            Ok(Arc::new(ScriptedCompletion::from_file(path)?))
        }
        CompletionBackend::Openai if cfg.transcripts == TranscriptMode::Replay => {
            Ok(Arc::new(UnavailableCompletion { tag: cfg.model_tag() }))
        }
        CompletionBackend::Openai => {
            let llm = OpenAiCompletion::new(s.base_url.as_deref(), api_key()?, &s.model, s.temperature)?;
            Ok(Arc::new(RetryingCompletion::new(llm, policy)))
        }
    }
}

pub fn embedding_from_config(cfg: &PipelineConfig) -> Result<Arc<dyn EmbeddingProvider>> {
    let s = &cfg.embedding;
    let policy = RetryPolicy { attempts: s.retries.max(1), backoff: Duration::from_millis(s.backoff_ms) };
    match s.provider {
        EmbeddingBackend::Hash => Ok(Arc::new(HashEmbedder::new(s.dimension, s.seed))),
        EmbeddingBackend::Openai => {
            let key = if cfg.transcripts == TranscriptMode::Replay {
                std::env::var(API_KEY_VAR).unwrap_or_default()
            } else {
                api_key()?
            };
            let e = OpenAiEmbedding::new(s.base_url.as_deref(), key, &s.model, s.dimension)?;
            Ok(Arc::new(RetryingEmbedding::new(e, policy)))
        }
    }
}
