//! Batch orchestration: configuration, provider wiring, caches and the
//! per-stage drivers behind the `dfin` subcommands.
//!
//! Every stage writes its outputs sorted by `question_id`. Files that must be
//! reproducible byte for byte under replay carry no timestamps or timings;
//! wall-clock measurements go to separate `timings.jsonl` / `eval_timing.csv`.

pub mod config;
pub mod eval;
pub mod focus;
pub mod generate;
pub mod gold;
pub mod io;
pub mod providers;
pub mod sweep;
pub mod topk;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::embedding::{self, BuildOptions, EmbeddingIndex};
use crate::error::{Error, Result};
use crate::provider::{CompletionProvider, EmbeddingProvider, RecordedCompletion, TranscriptMode, TranscriptStore};
use crate::schema::{self, DatabaseSchema, LoadOptions, QuestionRecord};

pub use config::{GeneratorKind, Overrides, PipelineConfig, Stage};
pub use focus::{ContextRecord, FocusOptions, FocusResult, FocusSummary, LinkRecord, TranscriptRecord};
pub use generate::{extract_sql, generation_prompt, PredRecord};
pub use gold::GoldRecord;
pub use providers::RecordedEmbedding;

/// Configuration plus the providers and transcript store shared by all
/// stages of one invocation.
pub struct Pipeline {
    pub config: PipelineConfig,
    llm: Arc<dyn CompletionProvider>,
    embedder: Arc<dyn EmbeddingProvider>,
    store: TranscriptStore,
}

impl Pipeline {
    /// Uses the given providers; the transcript store follows
    /// `config.transcripts`.
    pub fn with_providers(
        config: PipelineConfig,
        llm: Arc<dyn CompletionProvider>,
        embedder: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self> {
        config.validate()?;
        let store = match config.transcripts {
            TranscriptMode::Live => TranscriptStore::live(),
            mode => TranscriptStore::open(&config.transcript_path(), mode)?,
        };
        Ok(Self { config, llm, embedder, store })
    }

    /// Builds providers from the configuration (live ones need
    /// `OPENAI_API_KEY`).
    pub fn from_config(config: PipelineConfig) -> Result<Self> {
        let llm = providers::completion_from_config(&config)?;
        let embedder = providers::embedding_from_config(&config)?;
        Self::with_providers(config, llm, embedder)
    }

    /// For stages that never call a provider (gold extraction, scoring).
    pub fn offline(config: PipelineConfig) -> Result<Self> {
        let llm = Arc::new(providers::UnavailableCompletion::new(config.model_tag()));
        let embedder = Arc::new(crate::provider::HashEmbedder::new(config.embedding.dimension, config.embedding.seed));
        let config = PipelineConfig { transcripts: TranscriptMode::Live, ..config };
        Self::with_providers(config, llm, embedder)
    }

    pub fn store(&self) -> &TranscriptStore {
        &self.store
    }

    pub(crate) fn llm(&self, stage: Stage, config: &PipelineConfig) -> RecordedCompletion<'_> {
        RecordedCompletion::new(self.llm.as_ref(), &self.store, stage.as_str(), config.stage_hash(stage))
    }

    pub(crate) fn embedder(&self) -> RecordedEmbedding<'_> {
        RecordedEmbedding::new(self.embedder.as_ref(), &self.store, self.config.stage_hash(Stage::Embed))
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    pub fn questions(&self) -> Result<Vec<QuestionRecord>> {
        self.config.require_path("question file", &self.config.questions)?;
        let mut qs = schema::load_questions(&self.config.questions)?;
        qs.sort_by_key(|q| q.question_id);
        if let Some(w) = qs.windows(2).find(|w| w[0].question_id == w[1].question_id) {
            return Err(Error::Questions(format!("duplicate question_id {}", w[0].question_id)));
        }
        Ok(qs)
    }

    pub fn db_dir(&self, db_id: &str) -> PathBuf {
        schema::database_dir(&self.config.db_root, db_id)
    }

    /// Loads one database with any generated table descriptions applied.
    /// With `require_descriptions`, a table lacking one is an error that
    /// names the preprocessing command.
    pub fn load_schema(&self, db_id: &str, require_descriptions: bool) -> Result<DatabaseSchema> {
        let dir = self.db_dir(db_id);
        if !dir.is_dir() {
            return Err(Error::Config(format!("database {db_id:?} not found under {}", self.config.db_root.display())));
        }
        let mut s = schema::load_database(&dir, &LoadOptions { sample_rows: self.config.sample_rows })?;
        if let Some(d) = schema::read_table_descriptions(&dir)? {
            schema::apply_table_descriptions(&mut s, &d);
        }
        if require_descriptions {
            if let Some(t) = s.tables.iter().find(|t| t.generated_description.is_none()) {
                return Err(Error::Config(format!(
                    "{db_id}: table {:?} has no description; run `dfin preprocess` first",
                    t.name
                )));
            }
        }
        Ok(s)
    }

    /// Loads every database referenced by `questions`.
    pub fn load_schemas<'q>(
        &self,
        db_ids: impl IntoIterator<Item = &'q str>,
        require_descriptions: bool,
    ) -> Result<BTreeMap<String, DatabaseSchema>> {
        let mut out = BTreeMap::new();
        for id in db_ids {
            if !out.contains_key(id) {
                out.insert(id.to_string(), self.load_schema(id, require_descriptions)?);
            }
        }
        Ok(out)
    }

    /// Loads the cached embedding index of `schema`; a missing index names
    /// the command that builds it.
    pub fn load_index(&self, schema: &DatabaseSchema) -> Result<EmbeddingIndex> {
        let tag = self.embedder.provider_tag();
        let path = embedding::index_path(&self.config.cache_dir, &schema.db_id, &tag);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "{}: no embedding index at {}; run `dfin embed` first",
                schema.db_id,
                path.display()
            )));
        }
        embedding::load_index(&path, schema, self.embedder.as_ref())
    }

    /// Generates missing table descriptions for every database under the
    /// root (or only `db_ids`).
    pub fn preprocess(&self, db_ids: &[String], force: bool) -> Result<Vec<(String, schema::DescribeReport)>> {
        let llm = self.llm(Stage::Describe, &self.config);
        let mut reports = Vec::new();
        for dir in self.database_dirs(db_ids)? {
            let mut s = schema::load_database(&dir, &LoadOptions { sample_rows: self.config.sample_rows })?;
            let report = schema::generate_table_descriptions(&mut s, &dir, &llm, force)?;
            reports.push((s.db_id.clone(), report));
        }
        Ok(reports)
    }

    /// Builds (or validates the cached) embedding index of each database.
    pub fn embed(&self, db_ids: &[String], force: bool) -> Result<Vec<embedding::BuildOutcome>> {
        let embedder = self.embedder();
        let mut out = Vec::new();
        for dir in self.database_dirs(db_ids)? {
            let s = schema::load_database(&dir, &LoadOptions { sample_rows: self.config.sample_rows })?;
            let opts = BuildOptions { concurrency: self.config.concurrency, force };
            out.push(embedding::build_index(&s, &embedder, Some(&self.config.cache_dir), opts)?);
        }
        Ok(out)
    }

    fn database_dirs(&self, db_ids: &[String]) -> Result<Vec<PathBuf>> {
        if db_ids.is_empty() {
            self.config.require_path("database root", &self.config.db_root)?;
            schema::database_dirs(&self.config.db_root)
        } else {
            Ok(db_ids.iter().map(|id| self.db_dir(id)).collect())
        }
    }
}

pub(crate) fn require_file(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Pipeline(format!("{} not found; {hint}", path.display())))
    }
}
