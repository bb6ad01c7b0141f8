//! Column selection: embedding top-k plus forced key columns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{top_k_columns, EmbeddingIndex, EmbeddingVector};
use crate::error::{Error, Result};
use crate::ident;
use crate::schema::{ColumnRef, DatabaseSchema};

/// Whether `k` applies per linked table or across all linked tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopKScope {
    #[default]
    PerTable,
    Global,
}

impl fmt::Display for TopKScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopKScope::PerTable => "per-table",
            TopKScope::Global => "global",
        })
    }
}

impl FromStr for TopKScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-table" | "per_table" => Ok(TopKScope::PerTable),
            "global" => Ok(TopKScope::Global),
            other => Err(Error::Config(format!("unknown top-k scope {other:?}"))),
        }
    }
}

/// The focused subset of a schema selected for one question. Tables and
/// columns are kept in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaLink {
    pub db_id: String,
    pub tables: Vec<String>,
    pub columns: Vec<ColumnRef>,
    /// Key columns added on top of the embedding selection.
    pub forced_key_columns: Vec<ColumnRef>,
    /// Cosine scores of the embedding-selected columns.
    pub ranked_scores: BTreeMap<ColumnRef, f64>,
}

impl SchemaLink {
    pub fn contains_table(&self, table: &str) -> bool {
        self.tables.iter().any(|t| ident::eq(t, table))
    }

    pub fn contains_column(&self, table: &str, column: &str) -> bool {
        self.columns
            .iter()
            .any(|c| ident::eq(&c.table, table) && ident::eq(&c.column, column))
    }

    /// Selected columns of one table, in schema order.
    pub fn columns_of(&self, table: &str) -> Vec<&ColumnRef> {
        self.columns.iter().filter(|c| ident::eq(&c.table, table)).collect()
    }

    /// A link over every table and column of `schema`.
    pub fn full(schema: &DatabaseSchema) -> Self {
        SchemaLink {
            db_id: schema.db_id.clone(),
            tables: schema.table_names(),
            columns: schema
                .tables
                .iter()
                .flat_map(|t| t.columns.iter().map(|c| ColumnRef::new(&t.name, &c.original_name)))
                .collect(),
            forced_key_columns: Vec::new(),
            ranked_scores: BTreeMap::new(),
        }
    }

    /// Checks the structural invariants against `schema`.
    pub fn validate(&self, schema: &DatabaseSchema) -> Result<()> {
        for t in &self.tables {
            if schema.table(t).is_none() {
                return Err(Error::Pipeline(format!("linked table {t:?} is not in {}", schema.db_id)));
            }
            if self.columns_of(t).is_empty() {
                return Err(Error::Pipeline(format!("linked table {t:?} has no selected column")));
            }
        }
        for c in &self.columns {
            if !self.contains_table(&c.table) || schema.column(&c.table, &c.column).is_none() {
                return Err(Error::Pipeline(format!("selected column {c} is not valid")));
            }
        }
        for f in &self.forced_key_columns {
            if !self.contains_column(&f.table, &f.column) {
                return Err(Error::Pipeline(format!("forced column {f} is not selected")));
            }
        }
        Ok(())
    }
}

/// Primary-key and foreign-key columns that must accompany `tables`.
///
/// Every primary-key column of a linked table is included. A foreign key
/// between two linked tables contributes both endpoints; one whose other side
/// is not linked contributes only the linked side's column.
pub fn key_columns(schema: &DatabaseSchema, tables: &[String]) -> BTreeSet<ColumnRef> {
    let linked = |t: &str| tables.iter().any(|l| ident::eq(l, t));
    let mut out = BTreeSet::new();
    let mut add = |table: &str, column: &str| {
        if let Some(t) = schema.table(table) {
            if let Some(c) = t.column(column) {
                out.insert(ColumnRef::new(&t.name, &c.original_name));
            }
        }
    };
    for t in tables {
        if let Some(td) = schema.table(t) {
            for k in &td.primary_key {
                add(&td.name, k);
            }
        }
    }
    for fk in &schema.foreign_keys {
        if linked(&fk.from_table) {
            add(&fk.from_table, &fk.from_column);
        }
        if linked(&fk.to_table) {
            add(&fk.to_table, &fk.to_column);
        }
    }
    out
}

/// Selects the columns for `linked_tables`: embedding top-k (per table or
/// global) united with the forced key columns.
pub fn link_columns(
    schema: &DatabaseSchema,
    linked_tables: &[String],
    question: &EmbeddingVector,
    index: &EmbeddingIndex,
    k: usize,
    scope: TopKScope,
) -> Result<SchemaLink> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if linked_tables.is_empty() {
        return Err(Error::Pipeline("cannot link columns for an empty table set".into()));
    }
    let mut tables = Vec::new();
    for t in linked_tables {
        let name = schema
            .canonical_table(t)
            .ok_or_else(|| Error::Pipeline(format!("table {t:?} is not in {}", schema.db_id)))?;
        tables.push(name.to_string());
    }
    let tables = schema.in_schema_order(&tables);

    let mut ranked_scores = BTreeMap::new();
    match scope {
        TopKScope::PerTable => {
            for (_, cols) in top_k_columns(index, question, &tables, k)? {
                for c in cols {
                    ranked_scores.insert(c.column_ref(), c.score);
                }
            }
        }
        TopKScope::Global => {
            let ranked = index.rank_global(question, &tables)?;
            for c in ranked.iter().take(k) {
                ranked_scores.insert(c.column_ref(), c.score);
            }
            let keys = key_columns(schema, &tables);
            for t in &tables {
                let covered = ranked_scores.keys().chain(keys.iter()).any(|c| ident::eq(&c.table, t));
                if !covered {
                    // Best-scoring column of a table the global cut left empty.
                    if let Some(best) = ranked.iter().find(|c| ident::eq(&c.table, t)) {
                        ranked_scores.insert(best.column_ref(), best.score);
                    }
                }
            }
        }
    }

    let forced: Vec<ColumnRef> = key_columns(schema, &tables)
        .into_iter()
        .filter(|c| !ranked_scores.contains_key(c))
        .collect();
    let columns = schema.columns_in_schema_order(ranked_scores.keys().chain(forced.iter()));
    let link = SchemaLink {
        db_id: schema.db_id.clone(),
        tables,
        columns,
        forced_key_columns: schema.columns_in_schema_order(&forced),
        ranked_scores,
    };
    debug_assert!(link.validate(schema).is_ok());
    Ok(link)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::IndexEntry;
    use crate::schema::{ColumnDescriptor, ForeignKeyLink, TableDescriptor};
    use chrono::Utc;

    fn table(name: &str, cols: &[&str], pk: &[&str]) -> TableDescriptor {
        TableDescriptor {
            name: name.into(),
            columns: cols
                .iter()
                .enumerate()
                .map(|(i, c)| ColumnDescriptor {
                    table_name: name.into(),
                    original_name: c.to_string(),
                    description: String::new(),
                    data_format: "integer".into(),
                    value_description: None,
                    ordinal: i,
                })
                .collect(),
            primary_key: pk.iter().map(|s| s.to_string()).collect(),
            sample_rows: vec![],
            generated_description: None,
        }
    }

    /// Index where column `i` of each table gets vector (1, i).
    fn index(schema: &DatabaseSchema) -> EmbeddingIndex {
        let entries = schema
            .tables
            .iter()
            .flat_map(|t| {
                t.columns.iter().map(|c| IndexEntry {
                    table: t.name.clone(),
                    column: c.original_name.clone(),
                    ordinal: c.ordinal,
                    vector: EmbeddingVector::new(vec![1.0, c.ordinal as f64]).unwrap(),
                })
            })
            .collect();
        EmbeddingIndex {
            db_id: schema.db_id.clone(),
            provider_tag: "test".into(),
            dimension: 2,
            schema_hash: String::new(),
            built_at: Utc::now(),
            entries,
        }
    }

    fn schema() -> DatabaseSchema {
        DatabaseSchema {
            db_id: "toy".into(),
            tables: vec![
                table("a", &["id", "x", "y", "z"], &["id"]),
                table("b", &["id", "a_id", "w"], &[]),
                table("c", &["k", "b_id"], &["k"]),
            ],
            foreign_keys: vec![
                ForeignKeyLink { from_table: "b".into(), from_column: "a_id".into(), to_table: "a".into(), to_column: "id".into() },
                ForeignKeyLink { from_table: "c".into(), from_column: "b_id".into(), to_table: "b".into(), to_column: "id".into() },
            ],
        }
    }

    #[test]
    fn internal_foreign_key_forces_both_endpoints() {
        let s = schema();
        let q = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        // Highest ordinal wins under this query, so ids are never top-1.
        let link = link_columns(&s, &["b".into(), "a".into()], &q, &index(&s), 1, TopKScope::PerTable).unwrap();
        assert_eq!(link.tables, ["a", "b"]);
        let forced: Vec<_> = link.forced_key_columns.iter().map(ToString::to_string).collect();
        // b.id is the linked end of c.b_id -> b.id; c itself is not linked.
        assert_eq!(forced, ["a.id", "b.id", "b.a_id"]);
        let cols: Vec<_> = link.columns.iter().map(ToString::to_string).collect();
        assert_eq!(cols, ["a.id", "a.z", "b.id", "b.a_id", "b.w"]);
    }

    #[test]
    fn external_foreign_key_forces_local_endpoint_only() {
        let s = schema();
        let q = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        let link = link_columns(&s, &["c".into()], &q, &index(&s), 1, TopKScope::PerTable).unwrap();
        let cols: Vec<_> = link.columns.iter().map(ToString::to_string).collect();
        assert_eq!(cols, ["c.k", "c.b_id"]);
        assert_eq!(link.forced_key_columns, [ColumnRef::new("c", "k")]);
    }

    #[test]
    fn small_table_returns_everything() {
        let s = schema();
        let q = EmbeddingVector::new(vec![1.0, 0.5]).unwrap();
        let link = link_columns(&s, &["c".into()], &q, &index(&s), 15, TopKScope::PerTable).unwrap();
        assert_eq!(link.columns.len(), 2);
        assert!(link.forced_key_columns.is_empty());
    }

    #[test]
    fn global_scope_keeps_every_table() {
        let s = schema();
        let q = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        let tables = vec!["a".to_string(), "b".to_string()];
        let link = link_columns(&s, &tables, &q, &index(&s), 1, TopKScope::Global).unwrap();
        link.validate(&s).unwrap();
        assert!(link.ranked_scores.contains_key(&ColumnRef::new("a", "z")));
    }

    #[test]
    fn zero_k_is_rejected() {
        let s = schema();
        let q = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        assert!(link_columns(&s, &["a".into()], &q, &index(&s), 0, TopKScope::PerTable).is_err());
    }
}
