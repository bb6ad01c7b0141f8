use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, CompletionProvider, ProviderError};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptMode {
    /// Always call the provider; persist nothing.
    Live,
    /// Serve recorded responses; call and persist on a miss.
    Record,
    /// Serve recorded responses only; a miss is an error.
    Replay,
}

impl FromStr for TranscriptMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "live" => Ok(TranscriptMode::Live),
            "record" => Ok(TranscriptMode::Record),
            "replay" => Ok(TranscriptMode::Replay),
            other => Err(format!("unknown transcript mode {other:?} (live|record|replay)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub stage: String,
    pub config_hash: String,
    pub input_hash: String,
    pub prompt: String,
    pub response: String,
}

type Key = (String, String, String);

/// Append-only JSONL store of provider calls.
pub struct TranscriptStore {
    path: PathBuf,
    mode: TranscriptMode,
    entries: Mutex<HashMap<Key, String>>,
    writer: Mutex<Option<File>>,
}

impl TranscriptStore {
    pub fn open(path: &Path, mode: TranscriptMode) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.is_file() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<TranscriptEntry>(&line) {
                    Ok(e) => {
                        entries.insert((e.stage, e.config_hash, e.input_hash), e.response);
                    }
                    // A torn final line from an interrupted run is skipped.
                    Err(err) => log::warn!("{}:{}: skipping bad transcript line: {err}", path.display(), n + 1),
                }
            }
        } else if mode == TranscriptMode::Replay {
            log::warn!("replay transcript {} does not exist", path.display());
        }
        Ok(Self {
            path: path.to_path_buf(),
            mode,
            entries: Mutex::new(entries),
            writer: Mutex::new(None),
        })
    }

    /// A store that never persists; every call goes to the provider.
    pub fn live() -> Self {
        Self {
            path: PathBuf::new(),
            mode: TranscriptMode::Live,
            entries: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn mode(&self) -> TranscriptMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_hash(prompt: &str) -> String {
        sha256_hex(&[prompt.as_bytes()])
    }

    pub fn get(&self, stage: &str, config_hash: &str, prompt: &str) -> Option<String> {
        let key = (stage.to_string(), config_hash.to_string(), Self::input_hash(prompt));
        self.entries.lock().unwrap().get(&key).cloned()
    }

    fn append(&self, entry: &TranscriptEntry) -> std::result::Result<(), ProviderError> {
        let mut line = serde_json::to_string(entry).map_err(|e| ProviderError::Store(e.to_string()))?;
        line.push('\n');
        let mut writer = self.writer.lock().unwrap();
        if writer.is_none() {
            if let Some(parent) = self.path.parent() {
                fs::create_dir_all(parent).map_err(|e| ProviderError::Store(e.to_string()))?;
            }
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| ProviderError::Store(format!("{}: {e}", self.path.display())))?;
            *writer = Some(f);
        }
        let f = writer.as_mut().unwrap();
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| ProviderError::Store(format!("{}: {e}", self.path.display())))
    }

    /// Serves `prompt` from the store or through `call`, depending on mode.
    pub fn call(
        &self,
        stage: &str,
        config_hash: &str,
        prompt: &str,
        call: impl FnOnce() -> std::result::Result<String, ProviderError>,
    ) -> std::result::Result<String, ProviderError> {
        if self.mode == TranscriptMode::Live {
            return call();
        }
        let input_hash = Self::input_hash(prompt);
        let key = (stage.to_string(), config_hash.to_string(), input_hash.clone());
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        if self.mode == TranscriptMode::Replay {
            return Err(ProviderError::ReplayMiss {
                stage: stage.to_string(),
                input_hash,
            });
        }
        let response = call()?;
        let entry = TranscriptEntry {
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            input_hash,
            prompt: prompt.to_string(),
            response: response.clone(),
        };
        self.append(&entry)?;
        self.entries.lock().unwrap().insert(key, response.clone());
        Ok(response)
    }
}

/// A completion provider whose calls pass through a [`TranscriptStore`]
/// under a fixed stage and configuration hash.
pub struct RecordedCompletion<'a> {
    inner: &'a dyn CompletionProvider,
    store: &'a TranscriptStore,
    stage: String,
    config_hash: String,
}

impl<'a> RecordedCompletion<'a> {
    pub fn new(
        inner: &'a dyn CompletionProvider,
        store: &'a TranscriptStore,
        stage: impl Into<String>,
        config_hash: impl Into<String>,
    ) -> Self {
        Self {
            inner,
            store,
            stage: stage.into(),
            config_hash: config_hash.into(),
        }
    }
}

impl CompletionProvider for RecordedCompletion<'_> {
    fn model_tag(&self) -> String {
        self.inner.model_tag()
    }

    fn complete(&self, prompt: &str) -> std::result::Result<String, ProviderError> {
        self.store
            .call(&self.stage, &self.config_hash, prompt, || self.inner.complete(prompt))
    }
}
