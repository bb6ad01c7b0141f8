use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::column_linker::TopKScope;
use crate::error::{Error, Result};
use crate::provider::{sha256_hex, TranscriptMode};
use crate::table_linker::LinkMode;

pub const MAX_K: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// One prompt per question: focused context, question, hint.
    #[default]
    BaselinePrompt,
    /// Hands prompts to an outside system and ingests its predictions.
    ExternalStub,
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::BaselinePrompt => "baseline_prompt",
            GeneratorKind::ExternalStub => "external_stub",
        })
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline_prompt" | "baseline-prompt" => Ok(GeneratorKind::BaselinePrompt),
            "external_stub" | "external-stub" => Ok(GeneratorKind::ExternalStub),
            other => Err(Error::Config(format!("unknown generator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompletionBackend {
    Openai,
    /// Answers from a JSON script (see `ScriptedCompletion`).
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionSettings {
    pub provider: CompletionBackend,
    pub model: String,
    pub temperature: f64,
    pub base_url: Option<String>,
    pub script: Option<PathBuf>,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for CompletionSettings {
    fn default() -> Self {
        Self {
            provider: CompletionBackend::Openai,
            model: "gpt-4o".into(),
            temperature: 0.0,
            base_url: None,
            script: None,
            retries: 3,
            backoff_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingBackend {
    Openai,
    /// Deterministic offline feature hashing.
    Hash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    pub provider: EmbeddingBackend,
    pub model: String,
    pub dimension: usize,
    pub seed: u64,
    pub base_url: Option<String>,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            provider: EmbeddingBackend::Openai,
            model: "text-embedding-3-small".into(),
            dimension: 1536,
            seed: 0,
            base_url: None,
            retries: 3,
            backoff_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory holding one sub-directory per database.
    pub db_root: PathBuf,
    /// dev.json-style question file.
    pub questions: PathBuf,
    pub mode: LinkMode,
    pub k: usize,
    pub top_k_scope: TopKScope,
    pub sample_rows: usize,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub generator: GeneratorKind,
    /// Predictions produced by an external generator (JSONL or BIRD JSON).
    pub external_predictions: Option<PathBuf>,
    pub transcripts: TranscriptMode,
    pub concurrency: usize,
    /// Abort the run after this many failures in a row.
    pub max_consecutive_failures: usize,
    pub exec_timeout_secs: f64,
    /// Executions per query for efficiency timing (first one discarded).
    pub timing_runs: usize,
    pub completion: CompletionSettings,
    pub embedding: EmbeddingSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            db_root: PathBuf::from("data/bird/dev/dev_databases"),
            questions: PathBuf::from("data/bird/dev/dev.json"),
            mode: LinkMode::Minimal,
            k: 15,
            top_k_scope: TopKScope::PerTable,
            sample_rows: crate::schema::DEFAULT_SAMPLE_ROWS,
            cache_dir: PathBuf::from(".dfin-cache"),
            output_dir: PathBuf::from("runs/default"),
            generator: GeneratorKind::BaselinePrompt,
            external_predictions: None,
            transcripts: TranscriptMode::Record,
            concurrency: 4,
            max_consecutive_failures: 5,
            exec_timeout_secs: 30.0,
            timing_runs: crate::exec::DEFAULT_TIMING_RUNS,
            completion: CompletionSettings::default(),
            embedding: EmbeddingSettings::default(),
        }
    }
}

/// Values given on the command line; `Some` fields replace file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub db_root: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub mode: Option<LinkMode>,
    pub k: Option<usize>,
    pub top_k_scope: Option<TopKScope>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub generator: Option<GeneratorKind>,
    pub external_predictions: Option<PathBuf>,
    pub transcripts: Option<TranscriptMode>,
    pub concurrency: Option<usize>,
    pub timing_runs: Option<usize>,
}

/// Pipeline stages that key cached provider calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Describe,
    TableLink,
    Embed,
    Generate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Describe => "describe",
            Stage::TableLink => "table_link",
            Stage::Embed => "embed",
            Stage::Generate => "generate",
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML file, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn apply(&mut self, o: Overrides) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { self.$f = v; } )* };
        }
        set!(db_root, questions, mode, k, top_k_scope, cache_dir, output_dir, generator, transcripts, concurrency, timing_runs);
        if o.external_predictions.is_some() {
            self.external_predictions = o.external_predictions;
        }
    }

    /// Checks value ranges. Paths are checked by the stages that read them.
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_K).contains(&self.k) {
            return Err(Error::Config(format!("k must be in 1..={MAX_K}, got {}", self.k)));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be positive".into()));
        }
        if self.max_consecutive_failures == 0 {
            return Err(Error::Config("max_consecutive_failures must be positive".into()));
        }
        if self.exec_timeout_secs.is_nan() || self.exec_timeout_secs <= 0.0 {
            return Err(Error::Config("exec_timeout_secs must be positive".into()));
        }
        if self.embedding.dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn require_path(&self, what: &str, path: &Path) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Config(format!("{what} {} does not exist", path.display())))
        }
    }

    pub fn embedding_tag(&self) -> String {
        match self.embedding.provider {
            EmbeddingBackend::Hash => format!("hash-v1:d{}:s{}", self.embedding.dimension, self.embedding.seed),
            EmbeddingBackend::Openai => format!("openai:{}:d{}", self.embedding.model, self.embedding.dimension),
        }
    }

    pub fn model_tag(&self) -> String {
        match self.completion.provider {
            CompletionBackend::Openai => format!("openai:{}", self.completion.model),
            CompletionBackend::Scripted => "scripted".into(),
        }
    }

    /// Hash of the inputs a stage depends on. Table linking ignores `k`, so
    /// its cached calls survive a change of `k`.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let model = self.model_tag();
        let temp = format!("{:?}", self.completion.temperature);
        let parts: Vec<String> = match stage {
            Stage::Describe => vec![model, temp],
            Stage::TableLink => vec![model, temp, self.mode.to_string()],
            Stage::Embed => vec![self.embedding_tag()],
            Stage::Generate => return self.config_hash(),
        };
        let mut all = vec![stage.as_str().to_string()];
        all.extend(parts);
        hash_strings(&all)
    }

    /// Hash of every setting that affects run outputs.
    pub fn config_hash(&self) -> String {
        hash_strings(&[
            "run".to_string(),
            self.mode.to_string(),
            self.k.to_string(),
            self.top_k_scope.to_string(),
            self.model_tag(),
            format!("{:?}", self.completion.temperature),
            self.embedding_tag(),
            self.sample_rows.to_string(),
            self.generator.to_string(),
        ])
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.cache_dir.join("transcripts.jsonl")
    }
}

fn hash_strings(parts: &[String]) -> String {
    let bytes: Vec<&[u8]> = parts.iter().map(|s| s.as_bytes()).collect();
    sha256_hex(&bytes)[..16].to_string()
}
