use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{CompletionProvider, ProviderError};
use crate::error::{Error, Result};

/// One scripted reply: returned for the first prompt containing every
/// substring in `contains`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub contains: Vec<String>,
    pub response: String,
    /// When set, the entry yields a provider failure instead of a response.
    #[serde(default)]
    pub fail: bool,
}

/// Offline completion provider answering from a fixed script.
#[derive(Debug)]
pub struct ScriptedCompletion {
    tag: String,
    entries: Vec<ScriptEntry>,
    calls: AtomicUsize,
}

impl ScriptedCompletion {
    pub fn new(tag: impl Into<String>, entries: Vec<ScriptEntry>) -> Self {
        Self {
            tag: tag.into(),
            entries,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Ok(Self::new("scripted", entries))
    }

    /// Always answers `response`.
    pub fn constant(response: impl Into<String>) -> Self {
        Self::new(
            "scripted",
            vec![ScriptEntry {
                contains: vec![],
                response: response.into(),
                fail: false,
            }],
        )
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionProvider for ScriptedCompletion {
    fn model_tag(&self) -> String {
        self.tag.clone()
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let entry = self
            .entries
            .iter()
            .find(|e| e.contains.iter().all(|s| prompt.contains(s.as_str())));
        match entry {
            Some(e) if e.fail => Err(ProviderError::Request(format!(
                "scripted failure: {}",
                e.response
            ))),
            Some(e) => Ok(e.response.clone()),
            None => Err(ProviderError::NoScript(prompt.chars().take(60).collect())),
        }
    }
}
