use std::collections::HashMap;
use std::sync::Mutex;

use super::{sha256_hex, EmbeddingProvider, ProviderError};

/// Memoizes embeddings by text so repeated inputs cost one provider call.
pub struct CachedEmbedder<P> {
    inner: P,
    memo: Mutex<HashMap<String, Vec<f64>>>,
}

impl<P: EmbeddingProvider> CachedEmbedder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<P> {
    fn provider_tag(&self) -> String {
        self.inner.provider_tag()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let key = sha256_hex(&[text.as_bytes()]);
        if let Some(v) = self.memo.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text)?;
        self.memo.lock().unwrap().insert(key, v.clone());
        Ok(v)
    }
}
