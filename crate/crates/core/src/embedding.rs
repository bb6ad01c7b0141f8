//! Column embedding index, cosine scoring and top-k retrieval.
//!
//! Each column is embedded from the text
//! `"<table>. <original name>: <description>. <value description>"`. Indexes
//! are cached as one JSON file per `(db_id, provider_tag)` under
//! `<cache>/embeddings/<db_id>/`; a cached file whose provider tag, dimension
//! or schema hash disagrees with the current configuration is rejected.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident;
use crate::provider::{sha256_hex, EmbeddingProvider};
use crate::schema::{ColumnDescriptor, ColumnRef, DatabaseSchema};

const INDEX_FORMAT: &str = "dfin-embeddings/1";

/// A finite, non-empty vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Index("empty embedding vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Index(format!("non-finite value at position {i}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * alpha).collect())
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1] against rounding.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::Index(format!(
            "dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Index("cosine of a zero-norm vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub table: String,
    pub column: String,
    pub ordinal: usize,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub db_id: String,
    pub provider_tag: String,
    pub dimension: usize,
    pub schema_hash: String,
    pub built_at: DateTime<Utc>,
    /// One entry per schema column, in schema order.
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredColumn {
    pub table: String,
    pub column: String,
    pub ordinal: usize,
    pub score: f64,
}

impl ScoredColumn {
    pub fn column_ref(&self) -> ColumnRef {
        ColumnRef::new(&self.table, &self.column)
    }
}

/// Descending score, then table name (case-insensitive) and ordinal ascending.
pub fn rank_order(a: &ScoredColumn, b: &ScoredColumn) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| ident::normalize(&a.table).cmp(&ident::normalize(&b.table)))
        .then_with(|| a.ordinal.cmp(&b.ordinal))
}

impl EmbeddingIndex {
    pub fn has_table(&self, table: &str) -> bool {
        self.entries.iter().any(|e| ident::eq(&e.table, table))
    }

    /// All columns of `table` scored against `query`, best first.
    pub fn rank_table(&self, query: &EmbeddingVector, table: &str) -> Result<Vec<ScoredColumn>> {
        let mut scored = Vec::new();
        for e in self.entries.iter().filter(|e| ident::eq(&e.table, table)) {
            scored.push(ScoredColumn {
                table: e.table.clone(),
                column: e.column.clone(),
                ordinal: e.ordinal,
                score: cosine(query, &e.vector)?,
            });
        }
        if scored.is_empty() {
            return Err(Error::Index(format!(
                "table {table:?} is not in the {} index",
                self.db_id
            )));
        }
        scored.sort_by(rank_order);
        Ok(scored)
    }

    /// Columns of all `tables` ranked together, best first.
    pub fn rank_global(&self, query: &EmbeddingVector, tables: &[String]) -> Result<Vec<ScoredColumn>> {
        let mut all = Vec::new();
        for t in tables {
            all.extend(self.rank_table(query, t)?);
        }
        all.sort_by(rank_order);
        Ok(all)
    }
}

/// Per-table top-k: for each table in `tables` (in the given order), its
/// columns sorted by descending cosine score and truncated to `k`.
pub fn top_k_columns(
    index: &EmbeddingIndex,
    query: &EmbeddingVector,
    tables: &[String],
    k: usize,
) -> Result<Vec<(String, Vec<ScoredColumn>)>> {
    if tables.is_empty() {
        return Err(Error::Index("top-k over an empty table set".into()));
    }
    tables
        .iter()
        .map(|t| {
            let mut ranked = index.rank_table(query, t)?;
            ranked.truncate(k);
            let name = ranked[0].table.clone();
            Ok((name, ranked))
        })
        .collect()
}

/// Text embedded for one column; absent parts are skipped.
pub fn column_embedding_text(col: &ColumnDescriptor) -> String {
    let mut text = format!("{}. {}", col.table_name, col.original_name);
    let desc = col.description.trim();
    if !desc.is_empty() {
        text.push_str(": ");
        text.push_str(desc.trim_end_matches('.'));
        text.push('.');
    }
    if let Some(v) = col.value_description.as_deref().map(str::trim).filter(|v| !v.is_empty()) {
        text.push(' ');
        text.push_str(v);
    }
    text
}

/// Text embedded for a question: `"question\nevidence"`, or the question
/// alone when evidence is absent or blank.
pub fn question_text(question: &str, evidence: Option<&str>) -> String {
    match evidence.map(str::trim).filter(|e| !e.is_empty()) {
        Some(e) => format!("{question}\n{e}"),
        None => question.to_string(),
    }
}

pub fn embed_question(
    question: &str,
    evidence: Option<&str>,
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddingVector> {
    if question.trim().is_empty() {
        return Err(Error::Index("cannot embed an empty question".into()));
    }
    let values = provider.embed(&question_text(question, evidence))?;
    let v = EmbeddingVector::new(values)?;
    if v.dimension() != provider.dimension() {
        return Err(Error::Index(format!(
            "provider {} returned dimension {} (declared {})",
            provider.provider_tag(),
            v.dimension(),
            provider.dimension()
        )));
    }
    Ok(v)
}

/// Hash of every column's embedding text; changes whenever an embedded input
/// would change.
pub fn schema_hash(schema: &DatabaseSchema) -> String {
    let texts: Vec<String> = schema
        .tables
        .iter()
        .flat_map(|t| t.columns.iter().map(column_embedding_text))
        .collect();
    let parts: Vec<&[u8]> = texts.iter().map(|t| t.as_bytes()).collect();
    sha256_hex(&parts)
}

pub fn index_path(cache_dir: &Path, db_id: &str, provider_tag: &str) -> PathBuf {
    let file: String = provider_tag
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' { c } else { '_' })
        .collect();
    cache_dir.join("embeddings").join(db_id).join(format!("{file}.json"))
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexFile {
    format: String,
    db_id: String,
    provider_tag: String,
    dimension: usize,
    schema_hash: String,
    columns: Vec<ColumnRef>,
    vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub concurrency: usize,
    pub force: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { concurrency: 4, force: false }
    }
}

#[derive(Debug)]
pub struct BuildOutcome {
    pub index: EmbeddingIndex,
    pub provider_calls: usize,
    pub cache_hit: bool,
    pub path: Option<PathBuf>,
}

/// Builds (or loads from `cache_dir`) the column index for `schema`.
pub fn build_index(
    schema: &DatabaseSchema,
    provider: &dyn EmbeddingProvider,
    cache_dir: Option<&Path>,
    opts: BuildOptions,
) -> Result<BuildOutcome> {
    let tag = provider.provider_tag();
    let path = cache_dir.map(|d| index_path(d, &schema.db_id, &tag));
    if let Some(p) = path.as_deref() {
        if p.exists() && !opts.force {
            let index = load_index(p, schema, provider)?;
            return Ok(BuildOutcome { index, provider_calls: 0, cache_hit: true, path });
        }
    }

    let columns: Vec<&ColumnDescriptor> = schema.tables.iter().flat_map(|t| t.columns.iter()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency.max(1))
        .build()
        .map_err(|e| Error::Index(format!("cannot start embedding workers: {e}")))?;
    let results: Vec<Result<Vec<f64>>> = pool.install(|| {
        columns
            .par_iter()
            .map(|c| provider.embed(&column_embedding_text(c)).map_err(Error::from))
            .collect()
    });

    let dimension = provider.dimension();
    let mut entries = Vec::with_capacity(columns.len());
    for (col, res) in columns.iter().zip(results) {
        let values = res.map_err(|e| {
            Error::Index(format!("embedding {}.{} failed: {e}", col.table_name, col.original_name))
        })?;
        let vector = EmbeddingVector::new(values)
            .map_err(|e| Error::Index(format!("{}.{}: {e}", col.table_name, col.original_name)))?;
        if vector.dimension() != dimension {
            return Err(Error::Index(format!(
                "{}.{}: provider returned dimension {} (declared {dimension})",
                col.table_name,
                col.original_name,
                vector.dimension()
            )));
        }
        entries.push(IndexEntry {
            table: col.table_name.clone(),
            column: col.original_name.clone(),
            ordinal: col.ordinal,
            vector,
        });
    }
    let index = EmbeddingIndex {
        db_id: schema.db_id.clone(),
        provider_tag: tag,
        dimension,
        schema_hash: schema_hash(schema),
        built_at: Utc::now(),
        entries,
    };
    if let Some(p) = path.as_deref() {
        save_index(&index, p)?;
    }
    Ok(BuildOutcome { provider_calls: columns.len(), index, cache_hit: false, path })
}

pub fn save_index(index: &EmbeddingIndex, path: &Path) -> Result<()> {
    let file = IndexFile {
        format: INDEX_FORMAT.into(),
        db_id: index.db_id.clone(),
        provider_tag: index.provider_tag.clone(),
        dimension: index.dimension,
        schema_hash: index.schema_hash.clone(),
        columns: index.entries.iter().map(|e| ColumnRef::new(&e.table, &e.column)).collect(),
        vectors: index.entries.iter().map(|e| e.vector.0.clone()).collect(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string(&file).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a cached index and checks it against the current schema and
/// provider. Any disagreement is an error; rebuild with `force` instead.
pub fn load_index(path: &Path, schema: &DatabaseSchema, provider: &dyn EmbeddingProvider) -> Result<EmbeddingIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: IndexFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let reject = |why: String| {
        Err(Error::Index(format!(
            "{} rejected: {why}; rebuild it with `dfin embed --force`",
            path.display()
        )))
    };
    if file.format != INDEX_FORMAT {
        return reject(format!("unknown format {:?}", file.format));
    }
    if file.db_id != schema.db_id {
        return reject(format!("built for database {:?}", file.db_id));
    }
    let tag = provider.provider_tag();
    if file.provider_tag != tag {
        return reject(format!("provider tag {:?} does not match {tag:?}", file.provider_tag));
    }
    if file.dimension != provider.dimension() {
        return reject(format!("dimension {} does not match {}", file.dimension, provider.dimension()));
    }
    let hash = schema_hash(schema);
    if file.schema_hash != hash {
        return reject("schema content changed since the index was built".into());
    }
    if file.columns.len() != file.vectors.len() || file.columns.len() != schema.total_columns() {
        return reject("column count does not match the schema".into());
    }
    let mut entries = Vec::with_capacity(file.columns.len());
    let expected = schema.tables.iter().flat_map(|t| t.columns.iter());
    for ((c, v), col) in file.columns.into_iter().zip(file.vectors).zip(expected) {
        if !ident::eq(&c.table, &col.table_name) || !ident::eq(&c.column, &col.original_name) {
            return reject(format!("unexpected entry {}.{}", c.table, c.column));
        }
        if v.len() != file.dimension {
            return reject(format!("vector for {}.{} has dimension {}", c.table, c.column, v.len()));
        }
        let vector = EmbeddingVector::new(v)?;
        entries.push(IndexEntry {
            table: col.table_name.clone(),
            column: col.original_name.clone(),
            ordinal: col.ordinal,
            vector,
        });
    }
    let built_at = fs::metadata(path)
        .and_then(|m| m.modified())
        .map(DateTime::<Utc>::from)
        .unwrap_or_else(|_| Utc::now());
    Ok(EmbeddingIndex {
        db_id: file.db_id,
        provider_tag: file.provider_tag,
        dimension: file.dimension,
        schema_hash: file.schema_hash,
        built_at,
        entries,
    })
}
